#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rstn/config.hpp"
#include "rstn/gru.hpp"
#include "rstn/layers.hpp"
#include "rstn/random.hpp"
#include "rstn/stn.hpp"
#include "rstn/tensor.hpp"

namespace rstn {

enum class Variant { rnn_spn, ffn_spn, conv_baseline };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::rnn_spn: return "rnn-spn";
    case Variant::ffn_spn: return "ffn-spn";
    case Variant::conv_baseline: return "conv-baseline";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "rnn-spn") return Variant::rnn_spn;
  if (s == "ffn-spn") return Variant::ffn_spn;
  if (s == "conv-baseline") return Variant::conv_baseline;
  throw std::invalid_argument("unknown model variant '" + s + "' (expected rnn-spn, ffn-spn or conv-baseline)");
}

// Architecture description. Sizes are the full-scale values; `scale` divides
// every filter count and hidden width (rounding up) for desk-scale runs.
struct ModelConfig {
  Variant variant = Variant::rnn_spn;
  double downsample = 2.0;
  std::optional<double> dropout;  // defaults: 0.3 for rnn-spn, 0.5 otherwise
  std::size_t steps = kSequenceLength;
  std::size_t classes = kNumClasses;
  std::size_t channels = 1;
  std::size_t height = kCanvasSize;
  std::size_t width = kCanvasSize;
  std::size_t gru_units = 256;
  std::size_t loc_filters = 20;
  std::size_t rnn_filters = 32;
  std::size_t rnn_dense = 256;
  std::size_t ffn_filters = 96;
  std::size_t ffn_dense = 400;
  std::size_t ffn_loc_dense = 200;
  std::size_t scale = 1;
  std::uint64_t seed = 1;

  std::size_t scaled(std::size_t full) const { return std::max<std::size_t>(1, (full + scale - 1) / scale); }

  double dropout_rate() const {
    if (dropout) return *dropout;
    return variant == Variant::rnn_spn ? 0.3 : 0.5;
  }

  bool uses_transformer() const { return variant != Variant::conv_baseline; }

  void validate() const {
    if (scale == 0) throw std::invalid_argument("scale must be >= 1");
    if (steps == 0 || classes == 0 || channels == 0) throw std::invalid_argument("steps, classes and channels must be positive");
    const double p = dropout_rate();
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout must lie in [0,1)");
    if (uses_transformer()) output_extent(height, width, downsample);
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"variant", to_string(c.variant)},
                     {"d", c.downsample},
                     {"dropout", c.dropout_rate()},
                     {"steps", c.steps},
                     {"classes", c.classes},
                     {"channels", c.channels},
                     {"height", c.height},
                     {"width", c.width},
                     {"gru_units", c.gru_units},
                     {"loc_filters", c.loc_filters},
                     {"rnn_filters", c.rnn_filters},
                     {"rnn_dense", c.rnn_dense},
                     {"ffn_filters", c.ffn_filters},
                     {"ffn_dense", c.ffn_dense},
                     {"ffn_loc_dense", c.ffn_loc_dense},
                     {"scale", c.scale},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c = ModelConfig{};
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
  if (j.contains("d")) c.downsample = j.at("d").get<double>();
  if (j.contains("dropout")) c.dropout = j.at("dropout").get<double>();
  const auto size = [&](const char* key, std::size_t& dst) {
    if (j.contains(key)) dst = j.at(key).get<std::size_t>();
  };
  size("steps", c.steps);
  size("classes", c.classes);
  size("channels", c.channels);
  size("height", c.height);
  size("width", c.width);
  size("gru_units", c.gru_units);
  size("loc_filters", c.loc_filters);
  size("rnn_filters", c.rnn_filters);
  size("rnn_dense", c.rnn_dense);
  size("ffn_filters", c.ffn_filters);
  size("ffn_dense", c.ffn_dense);
  size("ffn_loc_dense", c.ffn_loc_dense);
  size("scale", c.scale);
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
}

// logits [T,N,K]; crops [T,N,C,h,w] and transforms [T,N,6] (T=1 for the
// feed-forward transformer, empty for the conv baseline).
template <class T>
struct ModelOutput {
  Tensor<T> logits;
  Tensor<T> crops;
  Tensor<T> transforms;
};

template <class T>
class Model {
 public:
  explicit Model(ModelConfig config) : config_(std::move(config)) {}
  virtual ~Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const noexcept { return config_; }

  virtual ModelOutput<T> forward(const Tensor<T>& images, Mode mode) = 0;
  // Takes dL/dlogits [T,N,K]; accumulates parameter gradients and returns dL/dimages.
  virtual Tensor<T> backward(const Tensor<T>& grad_logits) = 0;
  virtual std::vector<Param<T>*> params() = 0;
  // Affine transforms produced per input example.
  virtual std::size_t transforms_per_example() const = 0;

  void zero_grad() {
    for (auto* p : params()) p->grad.fill(T{0});
  }

  std::size_t parameter_count() { return rstn::parameter_count(params()); }

  Param<T>* find_param(const std::string& name) {
    for (auto* p : params())
      if (p->name == name) return p;
    return nullptr;
  }

 protected:
  void check_images(const Tensor<T>& images) const {
    if (images.rank() != 4 || images.dim(1) != config_.channels || images.dim(2) != config_.height ||
        images.dim(3) != config_.width || images.dim(0) == 0) {
      throw ShapeError("model expects [N," + std::to_string(config_.channels) + "," + std::to_string(config_.height) +
                       "," + std::to_string(config_.width) + "] images, got " + shape_str(images.shape()));
    }
  }

  std::uint64_t next_seed() { return derive_seed(config_.seed, seed_counter_++); }

  // conv -> relu [-> pool] [-> dropout] blocks shared by the classifiers.
  void add_conv_block(Sequential<T>& seq, const std::string& tag, std::size_t in, std::size_t filters, bool pool,
                      double p) {
    Rng rng(next_seed());
    seq.template add<Conv2d<T>>(tag, in, filters).initialize(rng);
    seq.template add<Relu<T>>(tag + "_relu");
    if (pool) seq.template add<MaxPool2x2<T>>(tag + "_pool");
    seq.template add<Dropout<T>>(tag + "_drop", p, next_seed());
  }

  // maxpool -> (conv -> relu -> maxpool) x2 -> conv -> relu -> flatten
  void build_localization_convs(Sequential<T>& seq) {
    const std::size_t f = config_.scaled(config_.loc_filters);
    seq.template add<MaxPool2x2<T>>("pool0");
    std::size_t in = config_.channels;
    for (int i = 1; i <= 3; ++i) {
      Rng rng(next_seed());
      const auto tag = "conv" + std::to_string(i);
      seq.template add<Conv2d<T>>(tag, in, f).initialize(rng);
      seq.template add<Relu<T>>(tag + "_relu");
      if (i < 3) seq.template add<MaxPool2x2<T>>("pool" + std::to_string(i));
      in = f;
    }
    seq.template add<Flatten<T>>("flatten");
  }

  // Final localization layer: zero weights, bias = identity transform.
  static void init_identity_head(Dense<T>& head) {
    head.weight().fill(T{0});
    const auto id = AffineParams<T>::identity();
    std::copy(id.theta.begin(), id.theta.end(), head.bias().raw());
  }

 private:
  ModelConfig config_;
  std::uint64_t seed_counter_ = 0;
};

// GRU localizer emitting one transform per step; every step's crop of the raw
// input goes through one shared classification network.
template <class T>
class RnnSpn final : public Model<T> {
 public:
  explicit RnnSpn(ModelConfig cfg)
      : Model<T>(std::move(cfg)),
        loc_("loc", {this->config().channels, this->config().height, this->config().width}),
        stn_(SpatialTransformer<T>::for_downsampling(this->config().height, this->config().width,
                                                     this->config().downsample)),
        cls_("cls", {this->config().channels, stn_.extent().h, stn_.extent().w}) {
    const auto& c = this->config();
    this->build_localization_convs(loc_);
    const std::size_t units = c.scaled(c.gru_units);
    gru_ = std::make_unique<GruCell<T>>("loc.gru", loc_.output_shape()[0], units);
    Rng rng(this->next_seed());
    gru_->initialize(rng);
    head_ = std::make_unique<Dense<T>>("loc.affine", units, 6);
    this->init_identity_head(*head_);

    const double p = c.dropout_rate();
    const std::size_t f = c.scaled(c.rnn_filters);
    this->add_conv_block(cls_, "conv1", c.channels, f, true, p);
    this->add_conv_block(cls_, "conv2", f, f, true, p);
    this->add_conv_block(cls_, "conv3", f, f, false, p);
    cls_.template add<Flatten<T>>("flatten");
    Rng drng(this->next_seed());
    cls_.template add<Dense<T>>("dense", cls_.output_shape()[0], c.scaled(c.rnn_dense)).initialize(drng);
    cls_.template add<Relu<T>>("dense_relu");
    cls_.template add<Dense<T>>("out", cls_.output_shape()[0], c.classes).initialize(drng);
  }

  ModelOutput<T> forward(const Tensor<T>& images, Mode mode) override { return forward(images, mode, nullptr); }

  // h0 defaults to zeros.
  ModelOutput<T> forward(const Tensor<T>& images, Mode mode, const Tensor<T>* h0) {
    this->check_images(images);
    const auto& c = this->config();
    const std::size_t n = images.dim(0), steps = c.steps, units = gru_->units();
    const Tensor<T> features = loc_.forward(images, mode);
    Tensor<T> h = h0 ? *h0 : Tensor<T>({n, units});
    gru_->begin_sequence();
    Tensor<T> hidden({steps * n, units});
    for (std::size_t t = 0; t < steps; ++t) {
      h = gru_->step(features, h);
      std::copy(h.data().begin(), h.data().end(), hidden.raw() + t * n * units);
    }
    ModelOutput<T> out;
    out.transforms = head_->forward(hidden, mode);
    out.crops = stn_.forward(images, out.transforms);
    out.logits = cls_.forward(out.crops, mode);
    out.logits.reshape({steps, n, c.classes});
    const auto e = stn_.extent();
    out.crops.reshape({steps, n, c.channels, e.h, e.w});
    out.transforms.reshape({steps, n, 6});
    batch_ = n;
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_logits) override {
    const auto& c = this->config();
    const std::size_t n = batch_, steps = c.steps, units = gru_->units();
    const Tensor<T> grad_crops = cls_.backward(grad_logits.reshaped({steps * n, c.classes}));
    auto sg = stn_.backward(grad_crops);
    const Tensor<T> grad_hidden = head_->backward(sg.theta);
    Tensor<T> grad_features({n, gru_->inputs()});
    Tensor<T> gh({n, units});
    for (std::size_t t = steps; t-- > 0;) {
      for (std::size_t i = 0; i < n * units; ++i) gh[i] += grad_hidden[t * n * units + i];
      auto g = gru_->backward_step(gh);
      accumulate(grad_features, g.x);
      gh = std::move(g.h_prev);
    }
    accumulate(sg.images, loc_.backward(grad_features));
    return std::move(sg.images);
  }

  std::vector<Param<T>*> params() override {
    auto out = loc_.params();
    for (auto* p : gru_->params()) out.push_back(p);
    for (auto* p : head_->params()) out.push_back(p);
    for (auto* p : cls_.params()) out.push_back(p);
    return out;
  }

  std::size_t transforms_per_example() const override { return this->config().steps; }

  Sequential<T>& localization() { return loc_; }
  GruCell<T>& gru() { return *gru_; }
  Dense<T>& affine_head() { return *head_; }
  Sequential<T>& classifier() { return cls_; }
  const SpatialTransformer<T>& transformer() const { return stn_; }

 private:
  Sequential<T> loc_;
  std::unique_ptr<GruCell<T>> gru_;
  std::unique_ptr<Dense<T>> head_;
  SpatialTransformer<T> stn_;
  Sequential<T> cls_;
  std::size_t batch_ = 0;
};

namespace detail {

// conv x3 (pool/dropout per block) -> dense -> relu trunk with one linear head
// per sequence position.
template <class T>
void build_multihead_classifier(MultiHead<T>& net, const ModelConfig& c, std::size_t filters, std::size_t dense,
                                std::uint64_t seed) {
  auto& trunk = net.trunk();
  const double p = c.dropout_rate();
  std::uint64_t k = 0;
  std::size_t in = c.channels;
  for (int i = 1; i <= 3; ++i) {
    Rng rng(derive_seed(seed, k++));
    const auto tag = "conv" + std::to_string(i);
    trunk.template add<Conv2d<T>>(tag, in, filters).initialize(rng);
    trunk.template add<Relu<T>>(tag + "_relu");
    if (i < 3) trunk.template add<MaxPool2x2<T>>(tag + "_pool");
    trunk.template add<Dropout<T>>(tag + "_drop", p, derive_seed(seed, k++));
    in = filters;
  }
  trunk.template add<Flatten<T>>("flatten");
  Rng rng(derive_seed(seed, k++));
  trunk.template add<Dense<T>>("dense", trunk.output_shape()[0], dense).initialize(rng);
  trunk.template add<Relu<T>>("dense_relu");
  for (std::size_t t = 0; t < c.steps; ++t) {
    auto& head = net.add_head("head" + std::to_string(t));
    head.template add<Dense<T>>("out", dense, c.classes).initialize(rng);
  }
}

template <class T>
Tensor<T> stack_heads(const std::vector<Tensor<T>>& heads) {
  const std::size_t n = heads.at(0).dim(0), k = heads[0].dim(1);
  Tensor<T> out({heads.size(), n, k});
  for (std::size_t t = 0; t < heads.size(); ++t) std::copy(heads[t].data().begin(), heads[t].data().end(), out.raw() + t * n * k);
  return out;
}

template <class T>
std::vector<Tensor<T>> split_heads(const Tensor<T>& g) {
  const std::size_t steps = g.dim(0), n = g.dim(1), k = g.dim(2);
  std::vector<Tensor<T>> out;
  for (std::size_t t = 0; t < steps; ++t) {
    out.emplace_back(Shape{n, k}, std::vector<T>(g.raw() + t * n * k, g.raw() + (t + 1) * n * k));
  }
  return out;
}

}  // namespace detail

// Feed-forward localizer producing a single transform; one crop classified by
// T independent softmax heads.
template <class T>
class FfnSpn final : public Model<T> {
 public:
  explicit FfnSpn(ModelConfig cfg)
      : Model<T>(std::move(cfg)),
        loc_("loc", {this->config().channels, this->config().height, this->config().width}),
        stn_(SpatialTransformer<T>::for_downsampling(this->config().height, this->config().width,
                                                     this->config().downsample)),
        cls_("cls", {this->config().channels, stn_.extent().h, stn_.extent().w}) {
    const auto& c = this->config();
    this->build_localization_convs(loc_);
    Rng rng(this->next_seed());
    loc_.template add<Dense<T>>("dense", loc_.output_shape()[0], c.scaled(c.ffn_loc_dense)).initialize(rng);
    loc_.template add<Relu<T>>("dense_relu");
    this->init_identity_head(loc_.template add<Dense<T>>("affine", loc_.output_shape()[0], 6));
    detail::build_multihead_classifier(cls_, c, c.scaled(c.ffn_filters), c.scaled(c.ffn_dense), this->next_seed());
  }

  ModelOutput<T> forward(const Tensor<T>& images, Mode mode) override {
    this->check_images(images);
    const auto& c = this->config();
    const std::size_t n = images.dim(0);
    ModelOutput<T> out;
    out.transforms = loc_.forward(images, mode);
    out.crops = stn_.forward(images, out.transforms);
    out.logits = detail::stack_heads(cls_.forward(out.crops, mode));
    const auto e = stn_.extent();
    out.crops.reshape({1, n, c.channels, e.h, e.w});
    out.transforms.reshape({1, n, 6});
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_logits) override {
    auto sg = stn_.backward(cls_.backward(detail::split_heads(grad_logits)));
    accumulate(sg.images, loc_.backward(sg.theta));
    return std::move(sg.images);
  }

  std::vector<Param<T>*> params() override {
    auto out = loc_.params();
    for (auto* p : cls_.params()) out.push_back(p);
    return out;
  }

  std::size_t transforms_per_example() const override { return 1; }

 private:
  Sequential<T> loc_;
  SpatialTransformer<T> stn_;
  MultiHead<T> cls_;
};

// The feed-forward classification network applied directly to the input.
template <class T>
class ConvBaseline final : public Model<T> {
 public:
  explicit ConvBaseline(ModelConfig cfg)
      : Model<T>(std::move(cfg)), cls_("cls", {this->config().channels, this->config().height, this->config().width}) {
    const auto& c = this->config();
    detail::build_multihead_classifier(cls_, c, c.scaled(c.ffn_filters), c.scaled(c.ffn_dense), this->next_seed());
  }

  ModelOutput<T> forward(const Tensor<T>& images, Mode mode) override {
    this->check_images(images);
    return {detail::stack_heads(cls_.forward(images, mode)), Tensor<T>(), Tensor<T>()};
  }

  Tensor<T> backward(const Tensor<T>& grad_logits) override { return cls_.backward(detail::split_heads(grad_logits)); }

  std::vector<Param<T>*> params() override { return cls_.params(); }

  std::size_t transforms_per_example() const override { return 0; }

 private:
  MultiHead<T> cls_;
};

template <class T>
std::unique_ptr<Model<T>> build_model(const ModelConfig& config) {
  config.validate();
  switch (config.variant) {
    case Variant::rnn_spn: return std::make_unique<RnnSpn<T>>(config);
    case Variant::ffn_spn: return std::make_unique<FfnSpn<T>>(config);
    case Variant::conv_baseline: return std::make_unique<ConvBaseline<T>>(config);
  }
  throw std::invalid_argument("invalid model variant");
}

// Arg-max class per position; ties resolve to the lowest class id.
template <class T>
Tensor<std::int64_t> predict(const Tensor<T>& logits) {
  if (logits.rank() != 3) throw ShapeError("predict expects [T,N,K] logits, got " + shape_str(logits.shape()));
  return argmax(logits, 2);
}

}  // namespace rstn
