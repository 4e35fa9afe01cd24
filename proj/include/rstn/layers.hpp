#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rstn/errors.hpp"
#include "rstn/random.hpp"
#include "rstn/tensor.hpp"

namespace rstn {

enum class Mode { train, eval };

// A trainable tensor and its gradient accumulator (always the same shape).
template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param(std::string n, Shape shape) : name(std::move(n)), value(shape), grad(std::move(shape)) {}
};

// Forward/backward contract. Shapes passed to output_shape exclude the batch
// axis; forward/backward tensors include it. A layer caches whatever its
// backward pass needs, so one instance serves one forward/backward at a time.
template <class T>
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  const std::string& name() const noexcept { return name_; }
  virtual std::string kind() const = 0;
  virtual Shape output_shape(const Shape& input) const = 0;
  virtual Tensor<T> forward(const Tensor<T>& input, Mode mode) = 0;
  // Returns dL/dinput; parameter gradients are accumulated, not overwritten.
  virtual Tensor<T> backward(const Tensor<T>& grad_output) = 0;
  virtual std::vector<Param<T>*> params() { return {}; }

  void zero_grad() {
    for (auto* p : params()) p->grad.fill(T{0});
  }

 protected:
  void remember_output(const Shape& shape) { output_shape_ = shape; }
  void require_forward(const Tensor<T>& grad_output) const {
    if (!output_shape_) throw StateError(name_ + ": backward called before forward");
    if (grad_output.shape() != *output_shape_) {
      throw ShapeError(name_ + ": gradient shape " + shape_str(grad_output.shape()) + " does not match forward output " +
                       shape_str(*output_shape_));
    }
  }

 private:
  std::string name_;
  std::optional<Shape> output_shape_;
};

namespace detail {

inline void require_rank(const Shape& s, std::size_t rank, const std::string& who) {
  if (s.size() != rank) throw ShapeError(who + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
}

inline Shape with_batch(std::size_t n, const Shape& s) {
  Shape out{n};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

// Column buffer [C*9, H*W] of the zero-padded 3x3 neighbourhoods of one image.
template <class T>
void im2col3x3(const T* image, std::size_t channels, std::size_t height, std::size_t width, T* col) {
  const std::size_t hw = height * width;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = image + c * hw;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        T* row = col + ((c * 3 + ky) * 3 + kx) * hw;
        for (std::size_t y = 0; y < height; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          T* dst = row + y * width;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) {
            std::fill(dst, dst + width, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * width;
          for (std::size_t x = 0; x < width; ++x) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x + kx) - 1;
            dst[x] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

template <class T>
void col2im3x3(const T* col, std::size_t channels, std::size_t height, std::size_t width, T* image) {
  const std::size_t hw = height * width;
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = image + c * hw;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const T* row = col + ((c * 3 + ky) * 3 + kx) * hw;
        for (std::size_t y = 0; y < height; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * width;
          const T* src = row + y * width;
          for (std::size_t x = 0; x < width; ++x) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x + kx) - 1;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(width)) dst[ix] += src[x];
          }
        }
      }
    }
  }
}

}  // namespace detail

// 3x3 cross-correlation, stride 1, one pixel of zero padding on every border.
// Kernels [F,C,3,3], bias [F].
template <class T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::string name, std::size_t in_channels, std::size_t filters)
      : Layer<T>(std::move(name)), in_channels_(in_channels), filters_(filters) {
    params_.emplace_back(this->name() + ".kernel", Shape{filters, in_channels, 3, 3});
    params_.emplace_back(this->name() + ".bias", Shape{filters});
  }

  std::string kind() const override { return "conv2d"; }
  std::size_t filters() const noexcept { return filters_; }
  Tensor<T>& kernel() { return params_[0].value; }
  Tensor<T>& bias() { return params_[1].value; }

  void initialize(Rng& rng) {
    init_fan_in(kernel(), in_channels_ * 9, rng);
    bias().fill(T{0});
  }

  Shape output_shape(const Shape& in) const override {
    detail::require_rank(in, 3, this->name());
    check_channels(in[0]);
    return {filters_, in[1], in[2]};
  }

  Tensor<T> forward(const Tensor<T>& input, Mode) override {
    detail::require_rank(input.shape(), 4, this->name());
    check_channels(input.dim(1));
    const std::size_t n = input.dim(0), h = input.dim(2), w = input.dim(3), hw = h * w;
    const std::size_t k = in_channels_ * 9;
    Tensor<T> out({n, filters_, h, w});
    col_.resize(k * hw);
    for (std::size_t b = 0; b < n; ++b) {
      detail::im2col3x3(input.raw() + b * in_channels_ * hw, in_channels_, h, w, col_.data());
      T* dst = out.raw() + b * filters_ * hw;
      gemm(false, false, filters_, hw, k, kernel().raw(), col_.data(), T{0}, dst);
      for (std::size_t f = 0; f < filters_; ++f) {
        const T bf = bias()[f];
        for (std::size_t i = 0; i < hw; ++i) dst[f * hw + i] += bf;
      }
    }
    input_ = input;
    this->remember_output(out.shape());
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_output) override {
    this->require_forward(grad_output);
    const std::size_t n = input_.dim(0), h = input_.dim(2), w = input_.dim(3), hw = h * w;
    const std::size_t k = in_channels_ * 9;
    Tensor<T> grad_input(input_.shape());
    std::vector<T> grad_col(k * hw);
    col_.resize(k * hw);
    auto& gk = params_[0].grad;
    auto& gb = params_[1].grad;
    for (std::size_t b = 0; b < n; ++b) {
      const T* go = grad_output.raw() + b * filters_ * hw;
      detail::im2col3x3(input_.raw() + b * in_channels_ * hw, in_channels_, h, w, col_.data());
      gemm(false, true, filters_, k, hw, go, col_.data(), T{1}, gk.raw());
      for (std::size_t f = 0; f < filters_; ++f) {
        T acc{0};
        for (std::size_t i = 0; i < hw; ++i) acc += go[f * hw + i];
        gb[f] += acc;
      }
      gemm(true, false, k, hw, filters_, kernel().raw(), go, T{0}, grad_col.data());
      detail::col2im3x3(grad_col.data(), in_channels_, h, w, grad_input.raw() + b * in_channels_ * hw);
    }
    return grad_input;
  }

  std::vector<Param<T>*> params() override { return {&params_[0], &params_[1]}; }

 private:
  void check_channels(std::size_t c) const {
    if (c != in_channels_) {
      throw ShapeError(this->name() + ": input has " + std::to_string(c) + " channels, kernels expect " +
                       std::to_string(in_channels_));
    }
  }

  std::size_t in_channels_;
  std::size_t filters_;
  std::vector<Param<T>> params_;
  Tensor<T> input_;
  AlignedVector<T> col_;
};

// 2x2 max pooling, stride 2. A trailing odd row/column is dropped. Backward
// routes each gradient to the first maximum in row-major window order.
template <class T>
class MaxPool2x2 final : public Layer<T> {
 public:
  using Layer<T>::Layer;

  std::string kind() const override { return "maxpool2x2"; }

  Shape output_shape(const Shape& in) const override {
    detail::require_rank(in, 3, this->name());
    if (in[1] < 2 || in[2] < 2) throw ShapeError(this->name() + ": pooling needs H,W >= 2, got " + shape_str(in));
    return {in[0], in[1] / 2, in[2] / 2};
  }

  Tensor<T> forward(const Tensor<T>& input, Mode) override {
    detail::require_rank(input.shape(), 4, this->name());
    const Shape per = output_shape({input.dim(1), input.dim(2), input.dim(3)});
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t oh = per[1], ow = per[2];
    Tensor<T> out({n, c, oh, ow});
    argmax_.assign(out.size(), 0);
    std::size_t o = 0;
    for (std::size_t plane = 0; plane < n * c; ++plane) {
      const std::size_t base = plane * h * w;
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x, ++o) {
          const std::size_t cand[4] = {base + (2 * y) * w + 2 * x, base + (2 * y) * w + 2 * x + 1,
                                       base + (2 * y + 1) * w + 2 * x, base + (2 * y + 1) * w + 2 * x + 1};
          std::size_t best = cand[0];
          for (int i = 1; i < 4; ++i) {
            if (input[cand[i]] > input[best]) best = cand[i];
          }
          argmax_[o] = best;
          out[o] = input[best];
        }
      }
    }
    input_shape_ = input.shape();
    this->remember_output(out.shape());
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_output) override {
    this->require_forward(grad_output);
    Tensor<T> grad_input(input_shape_);
    for (std::size_t o = 0; o < grad_output.size(); ++o) grad_input[argmax_[o]] += grad_output[o];
    return grad_input;
  }

 private:
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

// y = x W + b with x [N,D], W [D,U], b [U].
template <class T>
class Dense final : public Layer<T> {
 public:
  Dense(std::string name, std::size_t inputs, std::size_t units)
      : Layer<T>(std::move(name)), inputs_(inputs), units_(units) {
    params_.emplace_back(this->name() + ".weight", Shape{inputs, units});
    params_.emplace_back(this->name() + ".bias", Shape{units});
  }

  std::string kind() const override { return "dense"; }
  std::size_t units() const noexcept { return units_; }
  Tensor<T>& weight() { return params_[0].value; }
  Tensor<T>& bias() { return params_[1].value; }

  void initialize(Rng& rng) {
    init_fan_in(weight(), inputs_, rng);
    bias().fill(T{0});
  }

  Shape output_shape(const Shape& in) const override {
    detail::require_rank(in, 1, this->name());
    if (in[0] != inputs_) {
      throw ShapeError(this->name() + ": input width " + std::to_string(in[0]) + ", expected " +
                       std::to_string(inputs_));
    }
    return {units_};
  }

  Tensor<T> forward(const Tensor<T>& input, Mode) override {
    detail::require_rank(input.shape(), 2, this->name());
    output_shape({input.dim(1)});
    const std::size_t n = input.dim(0);
    Tensor<T> out({n, units_});
    gemm(false, false, n, units_, inputs_, input.raw(), weight().raw(), T{0}, out.raw());
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t u = 0; u < units_; ++u) out[b * units_ + u] += bias()[u];
    input_ = input;
    this->remember_output(out.shape());
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_output) override {
    this->require_forward(grad_output);
    const std::size_t n = input_.dim(0);
    gemm(true, false, inputs_, units_, n, input_.raw(), grad_output.raw(), T{1}, params_[0].grad.raw());
    auto& gb = params_[1].grad;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t u = 0; u < units_; ++u) gb[u] += grad_output[b * units_ + u];
    Tensor<T> grad_input({n, inputs_});
    gemm(false, true, n, inputs_, units_, grad_output.raw(), weight().raw(), T{0}, grad_input.raw());
    return grad_input;
  }

  std::vector<Param<T>*> params() override { return {&params_[0], &params_[1]}; }

 private:
  std::size_t inputs_;
  std::size_t units_;
  std::vector<Param<T>> params_;
  Tensor<T> input_;
};

template <class T>
class Relu final : public Layer<T> {
 public:
  using Layer<T>::Layer;

  std::string kind() const override { return "relu"; }
  Shape output_shape(const Shape& in) const override { return in; }

  Tensor<T> forward(const Tensor<T>& input, Mode) override {
    Tensor<T> out = rstn::relu(input);
    output_ = out;
    this->remember_output(out.shape());
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_output) override {
    this->require_forward(grad_output);
    Tensor<T> grad(grad_output.shape());
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = output_[i] > T{0} ? grad_output[i] : T{0};
    return grad;
  }

 private:
  Tensor<T> output_;
};

// Inverted dropout: surviving units are scaled by 1/(1-p) at train time, so
// eval mode is the identity.
template <class T>
class Dropout final : public Layer<T> {
 public:
  Dropout(std::string name, double p, std::uint64_t seed = 0) : Layer<T>(std::move(name)), p_(p), rng_(seed) {
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument(this->name() + ": dropout p must lie in [0,1)");
  }

  std::string kind() const override { return "dropout"; }
  double rate() const noexcept { return p_; }
  void reseed(std::uint64_t seed) { rng_.seed(seed); }
  Shape output_shape(const Shape& in) const override { return in; }

  Tensor<T> forward(const Tensor<T>& input, Mode mode) override {
    active_ = mode == Mode::train && p_ > 0.0;
    this->remember_output(input.shape());
    if (!active_) return input;
    mask_ = Tensor<T>(input.shape());
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p_));
    std::bernoulli_distribution keep(1.0 - p_);
    Tensor<T> out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) {
      mask_[i] = keep(rng_) ? keep_scale : T{0};
      out[i] = input[i] * mask_[i];
    }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_output) override {
    this->require_forward(grad_output);
    if (!active_) return grad_output;
    return mul(grad_output, mask_);
  }

 private:
  double p_;
  Rng rng_;
  bool active_ = false;
  Tensor<T> mask_;
};

// [N, d1, d2, ...] -> [N, d1*d2*...].
template <class T>
class Flatten final : public Layer<T> {
 public:
  using Layer<T>::Layer;

  std::string kind() const override { return "flatten"; }
  Shape output_shape(const Shape& in) const override { return {shape_size(in)}; }

  Tensor<T> forward(const Tensor<T>& input, Mode) override {
    if (input.rank() < 1) throw ShapeError(this->name() + ": cannot flatten a scalar");
    input_shape_ = input.shape();
    Tensor<T> out = input.reshaped({input.dim(0), input.size() / std::max<std::size_t>(input.dim(0), 1)});
    this->remember_output(out.shape());
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_output) override {
    this->require_forward(grad_output);
    return grad_output.reshaped(input_shape_);
  }

 private:
  Shape input_shape_;
};

// Ordered chain of layers. Each added layer is validated against the running
// per-example shape so mismatches surface at construction time.
template <class T>
class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(std::string prefix, Shape input_shape)
      : prefix_(std::move(prefix)), input_shape_(input_shape), output_shape_(std::move(input_shape)) {}

  template <class L, class... Args>
  L& add(const std::string& name, Args&&... args) {
    auto layer = std::make_unique<L>(prefix_.empty() ? name : prefix_ + "." + name, std::forward<Args>(args)...);
    output_shape_ = layer->output_shape(output_shape_);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  const Shape& input_shape() const noexcept { return input_shape_; }
  const Shape& output_shape() const noexcept { return output_shape_; }
  std::size_t size() const noexcept { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }

  Tensor<T> forward(const Tensor<T>& input, Mode mode) {
    Tensor<T> x = input;
    for (auto& l : layers_) x = l->forward(x, mode);
    return x;
  }

  Tensor<T> backward(const Tensor<T>& grad_output) {
    Tensor<T> g = grad_output;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    for (auto& l : layers_)
      for (auto* p : l->params()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (auto& l : layers_) l->zero_grad();
  }

  template <class F>
  void for_each_layer(F&& f) {
    for (auto& l : layers_) f(*l);
  }

 private:
  std::string prefix_;
  Shape input_shape_;
  Shape output_shape_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

// A shared trunk feeding several independent heads (the single branching
// point allowed in a layer graph).
template <class T>
class MultiHead {
 public:
  MultiHead(std::string prefix, Shape input_shape) : prefix_(std::move(prefix)), trunk_(prefix_, std::move(input_shape)) {}

  Sequential<T>& trunk() { return trunk_; }

  Sequential<T>& add_head(const std::string& name) {
    heads_.emplace_back(prefix_ + "." + name, trunk_.output_shape());
    return heads_.back();
  }

  std::size_t head_count() const noexcept { return heads_.size(); }
  Sequential<T>& head(std::size_t i) { return heads_.at(i); }

  std::vector<Tensor<T>> forward(const Tensor<T>& input, Mode mode) {
    const Tensor<T> features = trunk_.forward(input, mode);
    std::vector<Tensor<T>> outs;
    outs.reserve(heads_.size());
    for (auto& h : heads_) outs.push_back(h.forward(features, mode));
    return outs;
  }

  Tensor<T> backward(const std::vector<Tensor<T>>& grads) {
    if (grads.size() != heads_.size()) throw ShapeError(prefix_ + ": one gradient per head required");
    Tensor<T> g = heads_[0].backward(grads[0]);
    for (std::size_t i = 1; i < heads_.size(); ++i) accumulate(g, heads_[i].backward(grads[i]));
    return trunk_.backward(g);
  }

  std::vector<Param<T>*> params() {
    auto out = trunk_.params();
    for (auto& h : heads_)
      for (auto* p : h.params()) out.push_back(p);
    return out;
  }

 private:
  std::string prefix_;
  Sequential<T> trunk_;
  std::deque<Sequential<T>> heads_;
};

template <class T>
std::size_t parameter_count(const std::vector<Param<T>*>& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += p->value.size();
  return n;
}

}  // namespace rstn
