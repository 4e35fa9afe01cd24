#pragma once

// Finite-difference suites run by `rstn gradcheck`. All checks use double
// precision and small random shapes.

#include <functional>
#include <string>
#include <vector>

#include "rstn/gradcheck.hpp"
#include "rstn/gru.hpp"
#include "rstn/loss.hpp"
#include "rstn/models.hpp"
#include "rstn/stn.hpp"

namespace rstn::checks {

struct NamedReport {
  std::string name;
  GradcheckReport report;
};

namespace detail {

inline Tensor<double> rand_t(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  return random_uniform<double>(std::move(s), lo, hi, rng);
}

inline void randomize(const std::vector<Param<double>*>& params, std::uint64_t seed, double range) {
  Rng rng(seed);
  for (auto* p : params) fill_uniform(p->value, -range, range, rng);
}

inline double project(const Tensor<double>& y, const Tensor<double>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
  return s;
}

}  // namespace detail

inline std::vector<NamedReport> layer_suite(std::uint64_t seed, const GradcheckOptions& base) {
  using detail::rand_t;
  GradcheckOptions o = base;
  o.seed = seed;
  std::vector<NamedReport> out;
  const auto run = [&](const std::string& name, Sequential<double>& g, const Tensor<double>& x, Mode mode) {
    detail::randomize(g.params(), derive_seed(seed, 1), 0.5);
    out.push_back({name, gradcheck(g, x, o, mode)});
  };
  {
    Sequential<double> g("conv", {2, 5, 6});
    g.add<Conv2d<double>>("conv", 2, 3);
    run("conv2d", g, rand_t({2, 2, 5, 6}, derive_seed(seed, 2)), Mode::eval);
  }
  {
    Sequential<double> g("pool", {2, 6, 5});
    g.add<MaxPool2x2<double>>("pool");
    run("maxpool2x2", g, rand_t({2, 2, 6, 5}, derive_seed(seed, 3)), Mode::eval);
  }
  {
    Sequential<double> g("dense", {7});
    g.add<Dense<double>>("dense", 7, 4);
    run("dense", g, rand_t({3, 7}, derive_seed(seed, 4)), Mode::eval);
  }
  {
    Sequential<double> g("relu", {3, 4});
    g.add<Relu<double>>("relu");
    run("relu", g, rand_t({2, 3, 4}, derive_seed(seed, 5)), Mode::eval);
  }
  {
    Sequential<double> g("dropout", {12});
    g.add<Dropout<double>>("drop", 0.4, seed);
    run("dropout(train)", g, rand_t({3, 12}, derive_seed(seed, 6)), Mode::train);
  }
  {
    Sequential<double> g("flatten", {2, 3, 3});
    g.add<Flatten<double>>("flat");
    run("flatten", g, rand_t({2, 2, 3, 3}, derive_seed(seed, 7)), Mode::eval);
  }
  {
    auto logits = rand_t({4, 10}, derive_seed(seed, 8), -3.0, 3.0);
    const std::vector<std::int32_t> labels{static_cast<std::int32_t>(seed % 10), 3, 9, 0};
    const auto analytic = softmax_xent(logits, labels).grad;
    out.push_back({"softmax_xent",
                   gradcheck([&] { return static_cast<double>(softmax_xent(logits, labels).loss); },
                             {{"logits", &logits, analytic}}, o)});
  }
  return out;
}

inline std::vector<NamedReport> stn_suite(std::uint64_t seed, const GradcheckOptions& base) {
  GradcheckOptions o = base;
  o.seed = seed;
  Rng rng(derive_seed(seed, 11));
  auto images = random_uniform<double>({2, 2, 8, 8}, -1.0, 1.0, rng);
  Tensor<double> theta({4, 6});
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (std::size_t r = 0; r < 4; ++r) {
    const double t[6] = {0.7 + u(rng), u(rng), u(rng), u(rng), 0.7 + u(rng), u(rng)};
    std::copy(t, t + 6, theta.raw() + r * 6);
  }
  SpatialTransformer<double> stn(5, 6);
  const auto proj = random_uniform<double>({4, 2, 5, 6}, -1.0, 1.0, rng);
  stn.forward(images, theta);
  const auto g = stn.backward(proj);
  return {{"bilinear sampler (image, theta)",
           gradcheck([&] { return detail::project(stn.forward(images, theta), proj); },
                     {{"image", &images, g.images}, {"theta", &theta, g.theta}}, o)}};
}

inline std::vector<NamedReport> gru_suite(std::uint64_t seed, const GradcheckOptions& base) {
  using detail::rand_t;
  GradcheckOptions o = base;
  o.seed = seed;
  GruCell<double> cell("gru", 5, 4);
  Rng rng(derive_seed(seed, 21));
  cell.initialize(rng);
  for (std::size_t gate = 0; gate < 3; ++gate) fill_uniform(cell.bias(gate), -0.5, 0.5, rng);
  std::vector<Tensor<double>> xs, proj;
  for (std::uint64_t t = 0; t < 3; ++t) {
    xs.push_back(rand_t({3, 5}, derive_seed(seed, 22, t)));
    proj.push_back(rand_t({3, 4}, derive_seed(seed, 23, t)));
  }
  auto h0 = rand_t({3, 4}, derive_seed(seed, 24));
  const auto loss = [&] {
    cell.begin_sequence();
    Tensor<double> h = h0;
    double s = 0.0;
    for (std::size_t t = 0; t < 3; ++t) {
      h = cell.step(xs[t], h);
      s += detail::project(h, proj[t]);
    }
    return s;
  };
  cell.zero_grad();
  loss();
  std::vector<Tensor<double>> gx(3);
  Tensor<double> gh({3, 4});
  for (std::size_t t = 3; t-- > 0;) {
    accumulate(gh, proj[t]);
    auto g = cell.backward_step(gh);
    gx[t] = std::move(g.x);
    gh = std::move(g.h_prev);
  }
  std::vector<Probe> probes;
  for (auto* p : cell.params()) probes.push_back({p->name, &p->value, p->grad});
  for (std::size_t t = 0; t < 3; ++t) probes.push_back({"x" + std::to_string(t), &xs[t], gx[t]});
  probes.push_back({"h0", &h0, gh});
  return {{"gru (3 unrolled steps)", gradcheck(loss, std::move(probes), o)}};
}

// Toy-scale models (8x8 input, 2 steps) checked end to end through the
// sequence loss.
inline std::vector<NamedReport> full_suite(std::uint64_t seed, const GradcheckOptions& base) {
  GradcheckOptions o = base;
  o.seed = seed;
  std::vector<NamedReport> out;
  for (const auto v : {Variant::rnn_spn, Variant::ffn_spn, Variant::conv_baseline}) {
    ModelConfig c;
    c.variant = v;
    c.height = c.width = 8;
    c.steps = 2;
    c.loc_filters = c.rnn_filters = c.ffn_filters = 3;
    c.gru_units = 5;
    c.rnn_dense = c.ffn_dense = c.ffn_loc_dense = 6;
    c.seed = seed;
    auto m = build_model<double>(c);
    Rng rng(derive_seed(seed, 31));
    // Move every parameter off its init so samples avoid pixel centres.
    for (auto* p : m->params()) {
      Tensor<double> noise(p->value.shape());
      fill_uniform(noise, -0.1, 0.1, rng);
      accumulate(p->value, noise);
    }
    auto images = random_uniform<double>({2, 1, 8, 8}, 0.0, 1.0, rng);
    Labels labels({2, 2}, {static_cast<std::int32_t>(seed % 10), 4, 7, 1});
    const auto loss = [&] { return static_cast<double>(sequence_loss(m->forward(images, Mode::eval).logits, labels).loss); };
    m->zero_grad();
    const auto fwd = m->forward(images, Mode::eval);
    const auto gi = m->backward(sequence_loss(fwd.logits, labels).grad);
    std::vector<Probe> probes;
    for (auto* p : m->params()) probes.push_back({p->name, &p->value, p->grad});
    probes.push_back({"images", &images, gi});
    out.push_back({to_string(v) + " (toy 8x8, 2 steps)", gradcheck(loss, std::move(probes), o)});
  }
  return out;
}

inline const std::vector<std::string>& scopes() {
  static const std::vector<std::string> s{"layers", "stn", "gru", "full"};
  return s;
}

inline std::vector<NamedReport> run_scope(const std::string& scope, std::uint64_t seed, const GradcheckOptions& o) {
  if (scope == "layers") return layer_suite(seed, o);
  if (scope == "stn") return stn_suite(seed, o);
  if (scope == "gru") return gru_suite(seed, o);
  if (scope == "full") return full_suite(seed, o);
  throw std::invalid_argument("unknown gradcheck scope '" + scope + "'");
}

}  // namespace rstn::checks
