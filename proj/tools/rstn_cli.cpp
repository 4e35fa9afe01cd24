// rstn: dataset generation, training, evaluation, gradient checks and
// attention-crop rendering.
//
// Exit codes: 0 success, 1 check failure, 2 usage/config error,
// 3 data/format error.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "check_suites.hpp"
#include "rstn/rstn.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using rstn::TrainReal;

namespace {

enum Exit : int { kOk = 0, kCheckFailed = 1, kUsage = 2, kData = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Config resolution: defaults < --config file < RSTN_SEED < explicit flags.

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open config file " + path);
  try {
    json j = json::parse(is);
    if (!j.is_object()) throw UsageError("config file must hold a JSON object: " + path);
    return j;
  } catch (const json::parse_error& e) {
    throw UsageError("config file " + path + " is not valid JSON: " + e.what());
  }
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("RSTN_SEED");
  if (!s || !*s) return std::nullopt;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != std::string(s).size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw UsageError(std::string("RSTN_SEED must be an unsigned integer, got '") + s + "'");
  }
}

// Resolves the seed and records where it came from.
std::uint64_t resolve_seed(const CLI::Option* flag, std::uint64_t flag_value, const json& file, std::uint64_t fallback,
                           json& resolved) {
  std::uint64_t seed = fallback;
  std::string source = "default";
  if (file.contains("seed")) {
    seed = file.at("seed").get<std::uint64_t>();
    source = "config";
  }
  if (const auto e = env_seed()) {
    seed = *e;
    source = "env:RSTN_SEED";
  }
  if (flag->count()) {
    seed = flag_value;
    source = "flag";
  }
  resolved["seed"] = seed;
  resolved["seed_source"] = source;
  return seed;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw UsageError("cannot create output directory " + dir.string() + ": " + ec.message());
}

void require_exists(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw UsageError(what + " not found: " + p.string());
}

std::string sha256_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (is) {
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(is.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::ostringstream os;
  for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

rstn::SplitCounts parse_counts(const std::string& s) {
  std::vector<std::size_t> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--counts expects three integers train,val,test; got '" + s + "'");
    }
  }
  if (v.size() != 3) throw UsageError("--counts expects three integers train,val,test; got '" + s + "'");
  return {v[0], v[1], v[2]};
}

// ---------------------------------------------------------------------------
// dataset

struct DatasetArgs {
  std::string mnist_dir, out_dir, config, counts = "60000,10000,10000";
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::size_t pgm = 0;
  CLI::Option* seed_opt = nullptr;
};

int cmd_dataset(const DatasetArgs& a) {
  const json file = load_config_file(a.config);
  json resolved{{"command", "dataset"}};
  const auto seed = resolve_seed(a.seed_opt, a.seed, file, 1, resolved);
  const std::string mnist_dir = a.mnist_dir.empty() ? file.value("mnist_dir", std::string()) : a.mnist_dir;
  const std::string out_dir = a.out_dir.empty() ? file.value("out_dir", std::string()) : a.out_dir;
  if (mnist_dir.empty() || out_dir.empty()) throw UsageError("dataset needs --mnist-dir and --out-dir");
  require_exists(mnist_dir, "MNIST directory");
  const auto counts = parse_counts(a.counts);
  resolved.update({{"mnist_dir", mnist_dir},
                   {"out_dir", out_dir},
                   {"counts", {counts.train, counts.val, counts.test}},
                   {"threads", a.threads},
                   {"pgm", a.pgm}});
  ensure_dir(out_dir);

  const auto pools = rstn::load_mnist_dir(mnist_dir);
  std::cerr << "pools: train " << pools.train.size() << ", val " << pools.val.size() << ", test " << pools.test.size()
            << '\n';
  const auto files = rstn::generate_dataset(seed, pools, counts, {}, a.threads);
  json manifest{{"seed", seed},
                {"counts", {{"train", counts.train}, {"val", counts.val}, {"test", counts.test}}},
                {"pool_sizes", {{"train", pools.train.size()}, {"val", pools.val.size()}, {"test", pools.test.size()}}},
                {"files", json::object()}};
  for (const auto& f : files) {
    const std::string name = std::string(rstn::to_string(f.split)) + ".cmsq";
    rstn::save_dataset(fs::path(out_dir) / name, f);
    manifest["files"][name] = {{"records", f.size()}, {"sha256", sha256_file(fs::path(out_dir) / name)}};
    std::cout << name << ": " << f.size() << " records, sha256 " << manifest["files"][name]["sha256"].get<std::string>()
              << '\n';
    if (a.pgm) {
      const fs::path dir = fs::path(out_dir) / "pgm";
      ensure_dir(dir);
      for (std::size_t i = 0; i < std::min(a.pgm, f.size()); ++i) {
        rstn::write_pgm(dir / (std::string(rstn::to_string(f.split)) + "_" + std::to_string(i) + ".pgm"), 100, 100,
                        f.records[i].canvas);
      }
    }
  }
  write_json(fs::path(out_dir) / "manifest.json", manifest);
  write_json(fs::path(out_dir) / "config.json", resolved);
  return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string variant, config, data_dir, out_dir;
  double d = 2.0, dropout = 0.0, lr = 0.0, clip = 0.0, target = 0.0, loc_lr_scale = 1.0, lr_decay = 1.0;
  std::size_t scale = 1, batch_size = 0, epochs = 0, patience = 0, train_limit = 0;
  std::uint64_t seed = 1;
  CLI::Option *d_opt = nullptr, *dropout_opt = nullptr, *scale_opt = nullptr, *batch_opt = nullptr,
              *epochs_opt = nullptr, *patience_opt = nullptr, *lr_opt = nullptr, *clip_opt = nullptr,
              *seed_opt = nullptr, *limit_opt = nullptr, *target_opt = nullptr, *loc_lr_opt = nullptr, *decay_opt = nullptr;
};

rstn::DatasetFile load_split(const fs::path& dir, const std::string& name, std::size_t limit = 0) {
  const auto path = dir / (name + ".cmsq");
  require_exists(path, "dataset file");
  auto f = rstn::load_dataset(path);
  if (limit && f.records.size() > limit) f.records.resize(limit);
  return f;
}

int cmd_train(const TrainArgs& a) {
  json file = load_config_file(a.config);
  json resolved{{"command", "train"}};
  const auto seed = resolve_seed(a.seed_opt, a.seed, file, 1, resolved);

  // Model config from the flat keys of the file, then flag overrides.
  rstn::ModelConfig mc;
  try {
    mc = file.get<rstn::ModelConfig>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("invalid model settings in config file: ") + e.what());
  }
  if (!a.variant.empty()) mc.variant = rstn::parse_variant(a.variant);
  if (a.d_opt->count()) {
    if (mc.variant == rstn::Variant::conv_baseline) std::cerr << "warning: --d is ignored for conv-baseline\n";
    mc.downsample = a.d;
  }
  if (a.dropout_opt->count()) mc.dropout = a.dropout;
  if (a.scale_opt->count()) mc.scale = a.scale;
  mc.seed = seed;
  mc.validate();

  rstn::TrainSchedule s;
  s.epochs = file.value("epochs", s.epochs);
  s.patience = file.value("patience", s.patience);
  s.batch_size = file.value("batch_size", s.batch_size);
  s.optimizer.lr = file.value("lr", s.optimizer.lr);
  s.optimizer.rho = file.value("rho", s.optimizer.rho);
  s.optimizer.eps = file.value("eps", s.optimizer.eps);
  s.optimizer.loc_lr_scale = file.value("loc_lr_scale", s.optimizer.loc_lr_scale);
  s.lr_decay = file.value("lr_decay", s.lr_decay);
  if (file.contains("clip_norm")) {
    const auto& c = file.at("clip_norm");
    s.optimizer.clip_norm = c.is_null() || c.get<double>() <= 0.0 ? std::nullopt : std::optional<double>(c.get<double>());
  }
  if (a.epochs_opt->count()) s.epochs = a.epochs;
  if (a.patience_opt->count()) s.patience = a.patience;
  if (a.batch_opt->count()) s.batch_size = a.batch_size;
  if (a.lr_opt->count()) s.optimizer.lr = a.lr;
  if (a.loc_lr_opt->count()) s.optimizer.loc_lr_scale = a.loc_lr_scale;
  if (a.decay_opt->count()) s.lr_decay = a.lr_decay;
  if (!(s.optimizer.loc_lr_scale >= 0.0)) throw UsageError("loc_lr_scale must be non-negative");
  if (!(s.lr_decay > 0.0 && s.lr_decay <= 1.0)) throw UsageError("lr_decay must lie in (0,1]");
  if (file.contains("target_error")) s.target_val_error = file.at("target_error").get<double>();
  if (a.target_opt->count()) s.target_val_error = a.target;
  if (a.clip_opt->count()) s.optimizer.clip_norm = a.clip > 0.0 ? std::optional<double>(a.clip) : std::nullopt;
  s.shuffle_seed = rstn::derive_seed(seed, 0x5f);
  if (s.batch_size == 0 || s.epochs == 0) throw UsageError("batch_size and epochs must be positive");
  const std::size_t train_limit = a.limit_opt->count() ? a.train_limit : file.value("train_limit", std::size_t{0});

  const std::string data_dir = a.data_dir.empty() ? file.value("data_dir", std::string()) : a.data_dir;
  const std::string out_dir = a.out_dir.empty() ? file.value("out_dir", std::string()) : a.out_dir;
  if (data_dir.empty() || out_dir.empty()) throw UsageError("train needs --data-dir and --out-dir");
  require_exists(data_dir, "dataset directory");
  const auto train_data = load_split(data_dir, "train", train_limit);
  const auto val_data = load_split(data_dir, "val");
  ensure_dir(out_dir);

  resolved["model"] = mc;
  resolved["schedule"] = s;
  resolved.update({{"data_dir", data_dir}, {"out_dir", out_dir}, {"train_limit", train_limit}});
  write_json(fs::path(out_dir) / "config.json", resolved);

  auto model = rstn::build_model<TrainReal>(mc);
  std::cerr << to_string(mc.variant) << ": " << model->parameter_count() << " parameters, " << train_data.size()
            << " train / " << val_data.size() << " val examples\n";
  s.checkpoint = fs::path(out_dir) / "best.ckpt";
  s.on_epoch = [](std::size_t epoch, double loss, double val) {
    std::cerr << "epoch " << epoch << "  train_loss " << loss << "  val_error " << val << std::endl;
  };
  const auto report = rstn::train(*model, train_data, val_data, s);
  report.write_csv(fs::path(out_dir) / "report.csv");

  json summary{{"best_epoch", report.best_epoch},
               {"best_val_error", report.best_val_error},
               {"epochs_run", report.epochs.size()},
               {"stop_reason", report.stop_reason},
               {"initial_loss", report.initial_loss}};
  const auto test_path = fs::path(data_dir) / "test.cmsq";
  if (fs::exists(test_path)) {
    const auto test = rstn::load_dataset(test_path);
    summary["test_error"] = rstn::evaluate(*model, test, s.batch_size).per_digit_error;
    std::cout << "test per_digit_error " << summary["test_error"].get<double>() << '\n';
  }
  write_json(fs::path(out_dir) / "summary.json", summary);
  std::cout << "best val per_digit_error " << report.best_val_error << " at epoch " << report.best_epoch << " ("
            << report.stop_reason << ")\n";
  return report.diverged ? kCheckFailed : kOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string checkpoint, data, report;
  std::size_t batch_size = 256;
  double expect_below = -1.0;
};

int cmd_eval(const EvalArgs& a) {
  require_exists(a.checkpoint, "checkpoint");
  require_exists(a.data, "dataset file");
  auto model = rstn::load_model<TrainReal>(a.checkpoint);
  const auto data = rstn::load_dataset(a.data);
  const auto r = rstn::evaluate(*model, data, a.batch_size);
  std::cout << std::setprecision(10) << "per_digit_error " << r.per_digit_error << "\nloss " << r.loss << "\nexamples "
            << r.examples << '\n';
  if (!a.report.empty()) {
    const fs::path report(a.report);
    if (report.has_parent_path()) ensure_dir(report.parent_path());
    r.write_confusion_csv(report);
    json resolved{{"command", "eval"},
                  {"checkpoint", a.checkpoint},
                  {"data", a.data},
                  {"report", a.report},
                  {"batch_size", a.batch_size},
                  {"model", model->config()},
                  {"per_digit_error", r.per_digit_error}};
    write_json(report.parent_path() / "eval_config.json", resolved);
  }
  if (a.expect_below >= 0.0 && !(r.per_digit_error < a.expect_below)) {
    std::cerr << "per-digit error " << r.per_digit_error << " is not below " << a.expect_below << '\n';
    return kCheckFailed;
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradArgs {
  std::string scope = "all";
  double tol = 1e-4;
  std::size_t seeds = 5;
  std::uint64_t seed = 1;
  bool negative_control = false;
  CLI::Option* seed_opt = nullptr;
};

int cmd_gradcheck(const GradArgs& a) {
  json resolved;
  const auto base_seed = resolve_seed(a.seed_opt, a.seed, json::object(), 1, resolved);
  std::vector<std::string> scopes;
  if (a.scope == "all") {
    scopes = rstn::checks::scopes();
  } else {
    scopes.push_back(a.scope);
  }
  rstn::GradcheckOptions opts;
  opts.tol = a.tol;
  opts.negative_control = a.negative_control;
  std::cout << "gradcheck tol=" << a.tol << " seeds=" << a.seeds << " base_seed=" << base_seed
            << (a.negative_control ? " NEGATIVE CONTROL" : "") << '\n';
  bool all = true;
  double worst = 0.0;
  for (const auto& scope : scopes) {
    for (std::size_t k = 0; k < a.seeds; ++k) {
      const auto seed = rstn::derive_seed(base_seed, k);
      for (const auto& [name, report] : rstn::checks::run_scope(scope, seed, opts)) {
        const bool ok = report.passed();
        all = all && ok;
        worst = std::max(worst, report.max_error());
        std::cout << (ok ? "PASS " : "FAIL ") << scope << " seed#" << k << "  " << name
                  << "  max_rel_err=" << report.max_error() << "  kinks=" << report.kinks << "/" << report.checked
                  << '\n';
        if (!ok) std::cout << report.summary();
      }
    }
  }
  std::cout << (all ? "all checks passed" : "gradient check FAILED") << ", worst max_rel_err=" << worst << '\n';
  return all ? kOk : kCheckFailed;
}

// ---------------------------------------------------------------------------
// render

struct RenderArgs {
  std::string checkpoint, data, out_dir;
  std::size_t n = 5;
};

int cmd_render(const RenderArgs& a) {
  require_exists(a.checkpoint, "checkpoint");
  require_exists(a.data, "dataset file");
  auto model = rstn::load_model<TrainReal>(a.checkpoint);
  const auto data = rstn::load_dataset(a.data);
  ensure_dir(a.out_dir);
  write_json(fs::path(a.out_dir) / "config.json", {{"command", "render"},
                                                   {"checkpoint", a.checkpoint},
                                                   {"data", a.data},
                                                   {"n", a.n},
                                                   {"model", model->config()}});
  const std::size_t n = std::min(a.n, data.size());
  if (n == 0) return kOk;
  const auto& cfg = model->config();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto batch = rstn::make_batch<TrainReal>(data, idx);
  const auto out = model->forward(batch.images, rstn::Mode::eval);
  const auto pred = rstn::predict(out.logits);
  const std::size_t side = rstn::kCanvasSize;
  std::optional<rstn::SamplingGrid<TrainReal>> grid;
  if (cfg.uses_transformer()) {
    const auto e = rstn::output_extent(cfg.height, cfg.width, cfg.downsample);
    grid = rstn::make_grid<TrainReal>(e.h, e.w);
  }
  const auto steps = model->transforms_per_example();
  const auto to_px = [&](TrainReal v) {
    return static_cast<long>(std::lround((static_cast<double>(v) + 1.0) / 2.0 * static_cast<double>(side - 1)));
  };
  for (std::size_t i = 0; i < n; ++i) {
    const auto& canvas = data.records[i].canvas;
    const fs::path base = fs::path(a.out_dir) / ("ex" + std::to_string(i));
    rstn::write_pgm(base.string() + "_input.pgm", side, side, canvas);
    std::cout << "ex" << i << " labels";
    for (auto l : data.records[i].labels) std::cout << ' ' << int(l);
    std::cout << "  predicted";
    for (std::size_t t = 0; t < cfg.steps; ++t) std::cout << ' ' << pred(t, i);
    std::cout << '\n';
    if (!grid) continue;
    // Border points of every step's sample map, marked once and inverted.
    std::set<std::size_t> marks;
    for (std::size_t t = 0; t < steps; ++t) {
      rstn::AffineParams<TrainReal> ap;
      for (std::size_t k = 0; k < 6; ++k) ap.theta[k] = out.transforms(t, i, k);
      const auto s = rstn::transform_grid(ap, *grid);
      for (std::size_t r = 0; r < s.h; ++r)
        for (std::size_t c = 0; c < s.w; ++c) {
          if (r != 0 && c != 0 && r + 1 != s.h && c + 1 != s.w) continue;
          const long y = to_px(s.at(r, c).y), x = to_px(s.at(r, c).x);
          if (y >= 0 && x >= 0 && y < static_cast<long>(side) && x < static_cast<long>(side))
            marks.insert(static_cast<std::size_t>(y) * side + static_cast<std::size_t>(x));
        }
      const std::size_t ch = grid->h * grid->w;
      const TrainReal* crop = out.crops.raw() + (t * n + i) * cfg.channels * ch;
      rstn::write_pgm(base.string() + "_crop" + std::to_string(t) + ".pgm", grid->w, grid->h,
                      rstn::to_gray8<TrainReal>(std::span<const TrainReal>(crop, ch)));
    }
    auto overlay = canvas;
    for (const auto m : marks) overlay[m] = static_cast<std::uint8_t>(255 - overlay[m]);
    rstn::write_pgm(base.string() + "_overlay.pgm", side, side, overlay);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recurrent spatial transformer toolkit"};
  app.require_subcommand(1);

  DatasetArgs ds;
  auto* c_ds = app.add_subcommand("dataset", "Generate cluttered MNIST sequence files");
  c_ds->add_option("--mnist-dir", ds.mnist_dir, "Directory with the MNIST IDX files (raw or .gz)");
  c_ds->add_option("--out-dir", ds.out_dir, "Output directory");
  ds.seed_opt = c_ds->add_option("--seed", ds.seed, "Master seed");
  c_ds->add_option("--counts", ds.counts, "Record counts train,val,test")->capture_default_str();
  c_ds->add_option("--threads", ds.threads, "Generator threads (output is thread-count independent)");
  c_ds->add_option("--pgm", ds.pgm, "Also export the first N canvases of each split as PGM");
  c_ds->add_option("--config", ds.config, "JSON config file with flat keys");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train a model");
  c_tr->add_option("--variant", tr.variant, "rnn-spn | ffn-spn | conv-baseline");
  tr.d_opt = c_tr->add_option("--d", tr.d, "Down-sampling factor");
  c_tr->add_option("--config", tr.config, "JSON config file with flat keys");
  c_tr->add_option("--data-dir", tr.data_dir, "Directory holding train.cmsq and val.cmsq");
  c_tr->add_option("--out-dir", tr.out_dir, "Output directory");
  tr.dropout_opt = c_tr->add_option("--dropout", tr.dropout, "Dropout rate");
  tr.scale_opt = c_tr->add_option("--scale", tr.scale, "Divide filter counts and widths by this factor");
  tr.batch_opt = c_tr->add_option("--batch-size", tr.batch_size, "Batch size");
  tr.epochs_opt = c_tr->add_option("--epochs", tr.epochs, "Maximum epochs");
  tr.patience_opt = c_tr->add_option("--patience", tr.patience, "Early-stopping patience");
  tr.lr_opt = c_tr->add_option("--lr", tr.lr, "RMSprop learning rate");
  tr.loc_lr_opt = c_tr->add_option("--loc-lr-scale", tr.loc_lr_scale, "Learning-rate multiplier for the localization network");
  tr.decay_opt = c_tr->add_option("--lr-decay", tr.lr_decay, "Multiply the learning rate by this after every epoch");
  tr.clip_opt = c_tr->add_option("--clip", tr.clip, "Global gradient-norm clip (0 disables)");
  tr.seed_opt = c_tr->add_option("--seed", tr.seed, "Model and shuffle seed");
  tr.limit_opt = c_tr->add_option("--train-limit", tr.train_limit, "Use only the first N training records");
  tr.target_opt = c_tr->add_option("--target-error", tr.target, "Stop once validation per-digit error is below this");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  c_ev->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  c_ev->add_option("--data", ev.data, "CMSQ dataset file")->required();
  c_ev->add_option("--report", ev.report, "Write per-position confusion matrices to this CSV");
  c_ev->add_option("--batch-size", ev.batch_size, "Evaluation batch size");
  c_ev->add_option("--expect-below", ev.expect_below, "Exit 1 unless the per-digit error is below this value");

  GradArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks (double precision)");
  c_gc->add_option("--scope", gc.scope, "stn | gru | layers | full | all")
      ->check(CLI::IsMember({"stn", "gru", "layers", "full", "all"}));
  c_gc->add_option("--tol", gc.tol, "Maximum relative error")->capture_default_str();
  c_gc->add_option("--seeds", gc.seeds, "Number of random seeds")->capture_default_str();
  gc.seed_opt = c_gc->add_option("--seed", gc.seed, "Base seed");
  c_gc->add_flag("--negative-control", gc.negative_control, "Flip every analytic gradient; the check must fail");

  RenderArgs rd;
  auto* c_rd = app.add_subcommand("render", "Write input, overlay and crop images as PGM");
  c_rd->add_option("--checkpoint", rd.checkpoint, "Checkpoint file")->required();
  c_rd->add_option("--data", rd.data, "CMSQ dataset file")->required();
  c_rd->add_option("--n", rd.n, "Number of examples");
  c_rd->add_option("--out-dir", rd.out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*c_ds) return cmd_dataset(ds);
    if (*c_tr) return cmd_train(tr);
    if (*c_ev) return cmd_eval(ev);
    if (*c_gc) return cmd_gradcheck(gc);
    if (*c_rd) return cmd_render(rd);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const rstn::FormatError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const rstn::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kCheckFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
