#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "rstn/errors.hpp"
#include "rstn/layers.hpp"
#include "rstn/random.hpp"
#include "rstn/tensor.hpp"

namespace rstn {

// Gated recurrent unit:
//   z  = sigmoid(x W_z + h R_z + b_z)
//   r  = sigmoid(x W_r + h R_r + b_r)
//   h~ = tanh(x W_h + (r*h) R_h + b_h)
//   h' = (1-z)*h + z*h~
//
// Each step() pushes a cache; backward_step() pops the most recent one, so
// steps are unwound strictly in reverse. Weight gradients accumulate over
// all steps of the unroll.
template <class T>
class GruCell {
 public:
  GruCell(std::string name, std::size_t inputs, std::size_t units)
      : name_(std::move(name)), inputs_(inputs), units_(units) {
    for (const char* g : {"z", "r", "h"}) {
      params_.emplace_back(name_ + ".W_" + g, Shape{inputs, units});
      params_.emplace_back(name_ + ".R_" + g, Shape{units, units});
      params_.emplace_back(name_ + ".b_" + g, Shape{units});
    }
  }

  std::size_t inputs() const noexcept { return inputs_; }
  std::size_t units() const noexcept { return units_; }
  const std::string& name() const noexcept { return name_; }

  Tensor<T>& input_weight(std::size_t gate) { return params_[3 * gate].value; }
  Tensor<T>& recurrent_weight(std::size_t gate) { return params_[3 * gate + 1].value; }
  Tensor<T>& bias(std::size_t gate) { return params_[3 * gate + 2].value; }

  void initialize(Rng& rng) {
    for (std::size_t g = 0; g < 3; ++g) {
      init_fan_in(input_weight(g), inputs_, rng);
      init_orthogonal(recurrent_weight(g), rng);
      bias(g).fill(T{0});
    }
  }

  // Clears the step caches; call before each new unroll.
  void begin_sequence() {
    caches_.clear();
    unwinding_ = false;
  }

  std::size_t cached_steps() const noexcept { return caches_.size(); }

  Tensor<T> step(const Tensor<T>& x, const Tensor<T>& h_prev) {
    if (unwinding_) throw StateError(name_ + ": step() during backward; call begin_sequence() first");
    if (x.rank() != 2 || x.dim(1) != inputs_ || h_prev.rank() != 2 || h_prev.dim(1) != units_ ||
        h_prev.dim(0) != x.dim(0)) {
      throw ShapeError(name_ + ": step shapes " + shape_str(x.shape()) + ", " + shape_str(h_prev.shape()) +
                       " do not match cell [" + std::to_string(inputs_) + "->" + std::to_string(units_) + "]");
    }
    const std::size_t n = x.dim(0), u = units_;
    Cache c{x, h_prev, Tensor<T>({n, u}), Tensor<T>({n, u}), Tensor<T>({n, u}), Tensor<T>({n, u})};

    Tensor<T> az({n, u}), ar({n, u}), ah({n, u});
    affine(x, h_prev, 0, az);
    affine(x, h_prev, 1, ar);
    for (std::size_t i = 0; i < n * u; ++i) {
      c.z[i] = detail::apply_unary(UnaryOp::sigmoid, az[i]);
      c.r[i] = detail::apply_unary(UnaryOp::sigmoid, ar[i]);
      c.rh[i] = c.r[i] * h_prev[i];
    }
    gemm(false, false, n, u, inputs_, x.raw(), input_weight(2).raw(), T{0}, ah.raw());
    gemm(false, false, n, u, u, c.rh.raw(), recurrent_weight(2).raw(), T{1}, ah.raw());
    Tensor<T> h({n, u});
    for (std::size_t i = 0; i < n * u; ++i) {
      c.cand[i] = std::tanh(ah[i] + bias(2)[i % u]);
      h[i] = (T{1} - c.z[i]) * h_prev[i] + c.z[i] * c.cand[i];
    }
    caches_.push_back(std::move(c));
    return h;
  }

  struct StepGradients {
    Tensor<T> x;
    Tensor<T> h_prev;
  };

  StepGradients backward_step(const Tensor<T>& grad_h) {
    if (caches_.empty()) throw StateError(name_ + ": backward_step without a matching cached step");
    unwinding_ = true;
    Cache c = std::move(caches_.back());
    caches_.pop_back();
    const std::size_t n = c.x.dim(0), u = units_;
    if (grad_h.shape() != Shape{n, u}) {
      throw ShapeError(name_ + ": gradient shape " + shape_str(grad_h.shape()) + ", expected " + shape_str({n, u}));
    }
    Tensor<T> daz({n, u}), dar({n, u}), dah({n, u});
    StepGradients out{Tensor<T>({n, inputs_}), Tensor<T>({n, u})};
    for (std::size_t i = 0; i < n * u; ++i) {
      const T g = grad_h[i];
      daz[i] = g * (c.cand[i] - c.h_prev[i]) * c.z[i] * (T{1} - c.z[i]);
      dah[i] = g * c.z[i] * (T{1} - c.cand[i] * c.cand[i]);
      out.h_prev[i] = g * (T{1} - c.z[i]);
    }
    // Candidate path: d(r*h) = dah R_h^T.
    Tensor<T> drh({n, u});
    gemm(false, true, n, u, u, dah.raw(), recurrent_weight(2).raw(), T{0}, drh.raw());
    for (std::size_t i = 0; i < n * u; ++i) {
      dar[i] = drh[i] * c.h_prev[i] * c.r[i] * (T{1} - c.r[i]);
      out.h_prev[i] += drh[i] * c.r[i];
    }
    gemm(true, false, inputs_, u, n, c.x.raw(), dah.raw(), T{1}, grad_of(2, 0).raw());
    gemm(true, false, u, u, n, c.rh.raw(), dah.raw(), T{1}, grad_of(2, 1).raw());
    add_column_sums(dah, grad_of(2, 2));

    const Tensor<T>* pre[2] = {&daz, &dar};
    for (std::size_t gate = 0; gate < 2; ++gate) {
      const Tensor<T>& d = *pre[gate];
      gemm(true, false, inputs_, u, n, c.x.raw(), d.raw(), T{1}, grad_of(gate, 0).raw());
      gemm(true, false, u, u, n, c.h_prev.raw(), d.raw(), T{1}, grad_of(gate, 1).raw());
      add_column_sums(d, grad_of(gate, 2));
      gemm(false, true, n, u, u, d.raw(), recurrent_weight(gate).raw(), T{1}, out.h_prev.raw());
    }
    gemm(false, true, n, inputs_, u, daz.raw(), input_weight(0).raw(), T{0}, out.x.raw());
    gemm(false, true, n, inputs_, u, dar.raw(), input_weight(1).raw(), T{1}, out.x.raw());
    gemm(false, true, n, inputs_, u, dah.raw(), input_weight(2).raw(), T{1}, out.x.raw());
    return out;
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(T{0});
  }

 private:
  struct Cache {
    Tensor<T> x, h_prev, z, r, rh, cand;
  };

  Tensor<T>& grad_of(std::size_t gate, std::size_t which) { return params_[3 * gate + which].grad; }

  // out = x W_g + h R_g + b_g
  void affine(const Tensor<T>& x, const Tensor<T>& h, std::size_t gate, Tensor<T>& out) {
    const std::size_t n = x.dim(0), u = units_;
    gemm(false, false, n, u, inputs_, x.raw(), input_weight(gate).raw(), T{0}, out.raw());
    gemm(false, false, n, u, u, h.raw(), recurrent_weight(gate).raw(), T{1}, out.raw());
    const auto& b = bias(gate);
    for (std::size_t i = 0; i < n * u; ++i) out[i] += b[i % u];
  }

  static void add_column_sums(const Tensor<T>& d, Tensor<T>& dst) {
    const std::size_t u = dst.size();
    for (std::size_t i = 0; i < d.size(); ++i) dst[i % u] += d[i];
  }

  std::string name_;
  std::size_t inputs_;
  std::size_t units_;
  std::vector<Param<T>> params_;
  std::vector<Cache> caches_;
  bool unwinding_ = false;
};

}  // namespace rstn
