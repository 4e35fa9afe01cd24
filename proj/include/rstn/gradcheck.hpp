#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "rstn/errors.hpp"
#include "rstn/layers.hpp"
#include "rstn/random.hpp"
#include "rstn/tensor.hpp"

namespace rstn {

struct GradcheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  // Denominator floor for the relative error |a-n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  // Elements near a kink (ReLU, max-pool, bilinear cell boundary) are skipped
  // when the one-sided differences disagree and one matches the analytic
  // value, or when a stencil of eps/4 matches. More than this fraction of
  // skips fails.
  double max_kink_fraction = 0.02;
  // 0 checks every element; otherwise a seeded random subset per tensor.
  std::size_t max_elements = 0;
  std::uint64_t seed = 0;
  // Flips the sign of every analytic gradient; the check must then fail.
  bool negative_control = false;
};

struct TensorCheck {
  std::string name;
  std::size_t checked = 0;
  std::size_t kinks = 0;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradcheckReport {
  std::vector<TensorCheck> tensors;
  std::size_t kinks = 0;
  std::size_t checked = 0;
  double max_kink_fraction = 0.0;

  bool passed() const {
    const bool all = std::all_of(tensors.begin(), tensors.end(), [](const TensorCheck& t) { return t.passed; });
    return all && static_cast<double>(kinks) <= max_kink_fraction * static_cast<double>(checked);
  }

  double max_error() const {
    double m = 0.0;
    for (const auto& t : tensors) m = std::max(m, t.max_rel_error);
    return m;
  }

  std::string summary() const {
    std::ostringstream os;
    for (const auto& t : tensors) {
      os << (t.passed ? "  ok   " : "  FAIL ") << t.name << "  max_rel_err=" << t.max_rel_error
         << "  checked=" << t.checked;
      if (t.kinks) os << "  kinks=" << t.kinks;
      os << '\n';
    }
    return os.str();
  }
};

// A tensor to perturb in place together with its analytic gradient.
struct Probe {
  std::string name;
  Tensor<double>* value;
  Tensor<double> analytic;
};

// Central-difference check of every probe against `loss`, which must be a
// deterministic function of the probed tensors.
inline GradcheckReport gradcheck(const std::function<double()>& loss, std::vector<Probe> probes,
                                 const GradcheckOptions& opts = {}) {
  GradcheckReport report;
  report.max_kink_fraction = opts.max_kink_fraction;
  const double f0 = loss();
  if (!std::isfinite(f0)) throw NumericError("gradcheck: non-finite loss at the base point");
  Rng rng(opts.seed);
  for (auto& probe : probes) {
    auto& v = *probe.value;
    if (probe.analytic.shape() != v.shape()) {
      throw ShapeError("gradcheck: analytic gradient for " + probe.name + " has shape " +
                       shape_str(probe.analytic.shape()) + ", value has " + shape_str(v.shape()));
    }
    check_finite(probe.analytic, "analytic gradient of " + probe.name);
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (opts.max_elements && idx.size() > opts.max_elements) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opts.max_elements);
      std::sort(idx.begin(), idx.end());
    }
    TensorCheck tc{probe.name};
    for (const auto i : idx) {
      const double saved = v[i];
      v[i] = saved + opts.eps;
      const double fp = loss();
      v[i] = saved - opts.eps;
      const double fm = loss();
      v[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm)) throw NumericError("gradcheck: non-finite loss probing " + probe.name);
      const double numeric = (fp - fm) / (2.0 * opts.eps);
      const double analytic = opts.negative_control ? -probe.analytic[i] : probe.analytic[i];
      const auto rel = [&](double a, double b) {
        return std::abs(a - b) / std::max({std::abs(a), std::abs(b), opts.floor});
      };
      const double err = rel(analytic, numeric);
      ++tc.checked;
      if (err < opts.tol) {
        tc.max_rel_error = std::max(tc.max_rel_error, err);
        continue;
      }
      const double right = (fp - f0) / opts.eps;
      const double left = (f0 - fm) / opts.eps;
      const bool one_sided_disagree = rel(left, right) > 1e-2;
      const bool matches_a_side = rel(analytic, left) < 1e-2 || rel(analytic, right) < 1e-2;
      // A kink inside one of many summed terms barely separates the one-sided
      // slopes; a narrower stencil that clears it is matched instead.
      const double h = opts.eps / 4.0;
      v[i] = saved + h;
      const double fp4 = loss();
      v[i] = saved - h;
      const double fm4 = loss();
      v[i] = saved;
      const bool narrow_matches = rel(analytic, (fp4 - fm4) / (2.0 * h)) < opts.tol;
      if ((one_sided_disagree && matches_a_side) || narrow_matches) {
        ++tc.kinks;
        continue;
      }
      tc.max_rel_error = std::max(tc.max_rel_error, err);
      tc.passed = false;
    }
    report.checked += tc.checked;
    report.kinks += tc.kinks;
    report.tensors.push_back(std::move(tc));
  }
  return report;
}

// Checks a layer graph (parameters and input) under the scalar loss
// L = sum(projection * output) with a fixed random projection.
inline GradcheckReport gradcheck(Sequential<double>& graph, const Tensor<double>& input, const GradcheckOptions& opts = {},
                                 Mode mode = Mode::eval) {
  Tensor<double> x = input;
  const Shape out_shape = graph.forward(x, mode).shape();
  Rng rng(derive_seed(opts.seed, 0x9c));
  const auto projection = random_uniform<double>(out_shape, -1.0, 1.0, rng);
  // Dropout layers are re-seeded before every evaluation so train-mode masks
  // are identical across the perturbed evaluations.
  const auto reseed = [&] {
    std::uint64_t k = 0;
    graph.for_each_layer([&](Layer<double>& l) {
      if (auto* d = dynamic_cast<Dropout<double>*>(&l)) d->reseed(derive_seed(opts.seed, 0xd0, k++));
    });
  };
  const auto loss = [&]() -> double {
    reseed();
    const auto y = graph.forward(x, mode);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += projection[i] * y[i];
    return acc;
  };
  reseed();
  graph.zero_grad();
  graph.forward(x, mode);
  Tensor<double> grad_input = graph.backward(projection);
  std::vector<Probe> probes;
  for (auto* p : graph.params()) probes.push_back({p->name, &p->value, p->grad});
  probes.push_back({"input", &x, std::move(grad_input)});
  return gradcheck(loss, std::move(probes), opts);
}

}  // namespace rstn
