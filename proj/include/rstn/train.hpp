#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rstn/checkpoint.hpp"
#include "rstn/errors.hpp"
#include "rstn/layers.hpp"
#include "rstn/loss.hpp"
#include "rstn/models.hpp"
#include "rstn/sequence_data.hpp"
#include "rstn/tensor.hpp"

namespace rstn {

// ---------------------------------------------------------------------------
// RMSprop: s <- rho*s + (1-rho)*g^2 ; p <- p - lr*g / (sqrt(s) + eps)

struct RmsPropOptions {
  double lr = 1e-3;
  double rho = 0.9;
  double eps = 1e-6;
  std::optional<double> clip_norm = 10.0;  // global gradient-norm clip, applied before the update
  double loc_lr_scale = 1.0;  // multiplies lr for parameters named "loc.*"
};

template <class T>
void rmsprop_step(const std::vector<Param<T>*>& params, std::vector<Tensor<T>>& state, const RmsPropOptions& opt) {
  if (state.size() != params.size()) {
    state.clear();
    for (const auto* p : params) state.emplace_back(p->value.shape());
  }
  double sq = 0.0;
  for (const auto* p : params) {
    if (!p->grad.all_finite()) throw NumericError("non-finite gradient in " + p->name);
    for (const T g : p->grad.data()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  T gscale{1};
  if (opt.clip_norm && std::sqrt(sq) > *opt.clip_norm) gscale = static_cast<T>(*opt.clip_norm / std::sqrt(sq));
  const T rho = static_cast<T>(opt.rho), eps = static_cast<T>(opt.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& s = state[k];
    const T lr = static_cast<T>(p.name.starts_with("loc.") ? opt.lr * opt.loc_lr_scale : opt.lr);
    if (s.shape() != p.value.shape()) throw ShapeError("optimizer state does not mirror " + p.name);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const T g = p.grad[i] * gscale;
      s[i] = rho * s[i] + (T{1} - rho) * g * g;
      p.value[i] -= lr * g / (std::sqrt(s[i]) + eps);
    }
  }
}

template <class T>
class RmsProp {
 public:
  RmsProp(std::vector<Param<T>*> params, RmsPropOptions opt) : params_(std::move(params)), opt_(opt) {
    for (const auto* p : params_) state_.emplace_back(p->value.shape());
  }

  void step() { rmsprop_step(params_, state_, opt_); }
  void set_lr(double lr) noexcept { opt_.lr = lr; }
  const std::vector<Tensor<T>>& state() const noexcept { return state_; }
  const RmsPropOptions& options() const noexcept { return opt_; }

 private:
  std::vector<Param<T>*> params_;
  RmsPropOptions opt_;
  std::vector<Tensor<T>> state_;
};

// ---------------------------------------------------------------------------
// Metrics.

// Fraction of mismatched digit positions. predictions [T,N], labels [N,T].
inline double per_digit_error(const Tensor<std::int64_t>& predictions, const Labels& labels) {
  if (predictions.rank() != 2 || labels.rank() != 2 || predictions.dim(0) != labels.dim(1) ||
      predictions.dim(1) != labels.dim(0)) {
    throw ShapeError("per_digit_error: predictions " + shape_str(predictions.shape()) + " vs labels " +
                     shape_str(labels.shape()));
  }
  const std::size_t steps = predictions.dim(0), n = predictions.dim(1);
  if (steps * n == 0) return 0.0;
  std::size_t wrong = 0;
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t i = 0; i < n; ++i) wrong += predictions(t, i) != labels(i, t);
  return static_cast<double>(wrong) / static_cast<double>(steps * n);
}

using Confusion = std::array<std::array<std::size_t, kNumClasses>, kNumClasses>;  // [true][predicted]

struct EvalResult {
  double per_digit_error = 0.0;
  double loss = 0.0;
  std::size_t examples = 0;
  std::vector<Confusion> confusion;  // one per sequence position

  void write_confusion_csv(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "position,true_label,predicted,count\n";
    for (std::size_t t = 0; t < confusion.size(); ++t)
      for (int y = 0; y < kNumClasses; ++y)
        for (int p = 0; p < kNumClasses; ++p) os << t << ',' << y << ',' << p << ',' << confusion[t][y][p] << '\n';
  }
};

template <class T>
EvalResult evaluate(Model<T>& model, const DatasetFile& data, std::size_t batch_size = 256) {
  EvalResult r;
  const std::size_t steps = model.config().steps;
  r.confusion.assign(steps, Confusion{});
  std::size_t wrong = 0;
  double loss_sum = 0.0;
  BatchStream<T> stream(data, batch_size, std::nullopt);
  while (auto batch = stream.next()) {
    const auto out = model.forward(batch->images, Mode::eval);
    const std::size_t n = batch->images.dim(0);
    loss_sum += static_cast<double>(sequence_loss(out.logits, batch->labels).loss) * static_cast<double>(n);
    const auto pred = predict(out.logits);
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t i = 0; i < n; ++i) {
        const auto y = batch->labels(i, t);
        const auto p = pred(t, i);
        wrong += p != y;
        ++r.confusion[t][static_cast<std::size_t>(y)][static_cast<std::size_t>(p)];
      }
    }
    r.examples += n;
  }
  if (r.examples) {
    r.per_digit_error = static_cast<double>(wrong) / static_cast<double>(r.examples * steps);
    r.loss = loss_sum / static_cast<double>(r.examples);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Training loop with validation-based checkpoint selection.

struct TrainSchedule {
  std::size_t epochs = 100;
  std::size_t patience = 10;
  std::size_t batch_size = 256;
  RmsPropOptions optimizer;
  double lr_decay = 1.0;  // lr multiplier applied after every epoch
  std::uint64_t shuffle_seed = 7;
  double divergence_factor = 10.0;
  std::size_t divergence_epochs = 3;
  std::optional<double> target_val_error;  // stop once val error drops below this
  std::optional<std::filesystem::path> checkpoint;  // best checkpoint is written here when set
  std::function<void(std::size_t epoch, double train_loss, double val_error)> on_epoch;
};

inline void to_json(nlohmann::json& j, const TrainSchedule& s) {
  j = nlohmann::json{{"epochs", s.epochs},
                     {"patience", s.patience},
                     {"batch_size", s.batch_size},
                     {"lr", s.optimizer.lr},
                     {"rho", s.optimizer.rho},
                     {"eps", s.optimizer.eps},
                     {"clip_norm", s.optimizer.clip_norm ? nlohmann::json(*s.optimizer.clip_norm) : nlohmann::json()},
                     {"loc_lr_scale", s.optimizer.loc_lr_scale},
                     {"lr_decay", s.lr_decay},
                     {"shuffle_seed", s.shuffle_seed},
                     {"target_val_error", s.target_val_error ? nlohmann::json(*s.target_val_error) : nlohmann::json()}};
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_error = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_error = std::numeric_limits<double>::infinity();
  double initial_loss = 0.0;
  bool diverged = false;
  std::string stop_reason;
  nlohmann::json config;  // model config + schedule snapshot

  void write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os.precision(17);
    os << "epoch,train_loss,val_error,seconds\n";
    for (const auto& e : epochs) os << e.epoch << ',' << e.train_loss << ',' << e.val_error << ',' << e.seconds << '\n';
  }
};

// Trains `model` in place. On return the model holds the parameters of the
// epoch with the lowest validation per-digit error.
template <class T>
TrainReport train(Model<T>& model, const DatasetFile& train_data, const DatasetFile& val_data, const TrainSchedule& schedule) {
  using clock = std::chrono::steady_clock;
  TrainReport report;
  report.config = {{"model", model.config()}, {"schedule", schedule}};
  const auto params = model.params();
  RmsProp<T> opt(params, schedule.optimizer);
  std::vector<Tensor<T>> best;
  std::size_t since_best = 0, above_limit = 0;
  bool have_initial = false;

  for (std::size_t epoch = 1; epoch <= schedule.epochs; ++epoch) {
    const auto t0 = clock::now();
    BatchStream<T> stream(train_data, schedule.batch_size, derive_seed(schedule.shuffle_seed, epoch));
    double loss_sum = 0.0;
    std::size_t seen = 0;
    while (auto batch = stream.next()) {
      model.zero_grad();
      const auto out = model.forward(batch->images, Mode::train);
      const auto loss = sequence_loss(out.logits, batch->labels);
      if (!std::isfinite(static_cast<double>(loss.loss))) throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
      if (!have_initial) {
        report.initial_loss = static_cast<double>(loss.loss);
        have_initial = true;
      }
      model.backward(loss.grad);
      opt.step();
      const std::size_t n = batch->images.dim(0);
      loss_sum += static_cast<double>(loss.loss) * static_cast<double>(n);
      seen += n;
    }
    EpochRecord rec{epoch, seen ? loss_sum / static_cast<double>(seen) : 0.0, evaluate(model, val_data, schedule.batch_size).per_digit_error, 0.0};
    rec.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    opt.set_lr(opt.options().lr * schedule.lr_decay);
    report.epochs.push_back(rec);
    if (schedule.on_epoch) schedule.on_epoch(epoch, rec.train_loss, rec.val_error);

    if (rec.val_error < report.best_val_error) {
      report.best_val_error = rec.val_error;
      report.best_epoch = epoch;
      since_best = 0;
      best.clear();
      for (const auto* p : params) best.push_back(p->value);
      if (schedule.checkpoint) save_model(*schedule.checkpoint, model, nlohmann::json{{"epoch", epoch}, {"val_error", rec.val_error}});
    } else {
      ++since_best;
    }

    above_limit = rec.train_loss > schedule.divergence_factor * report.initial_loss ? above_limit + 1 : 0;
    if (above_limit >= schedule.divergence_epochs) {
      report.diverged = true;
      report.stop_reason = "diverged";
      break;
    }
    if (schedule.target_val_error && rec.val_error < *schedule.target_val_error) {
      report.stop_reason = "target";
      break;
    }
    if (since_best >= schedule.patience) {
      report.stop_reason = "patience";
      break;
    }
  }
  if (report.stop_reason.empty()) report.stop_reason = "max_epochs";
  for (std::size_t k = 0; k < best.size(); ++k) params[k]->value = best[k];
  return report;
}

}  // namespace rstn
