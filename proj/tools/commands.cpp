#include "commands.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "drio/config.hpp"
#include "drio/cv.hpp"
#include "drio/dataset_io.hpp"
#include "drio/error.hpp"
#include "drio/masking.hpp"
#include "drio/metrics.hpp"
#include "drio/train.hpp"

namespace drio::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t resolve_threads(std::size_t flag_value) {
  if (const char* env = std::getenv("DRIO_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return flag_value == 0 ? 1 : flag_value;
}

namespace {

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Written with status "running" when a command starts and rewritten with
// the outputs once it succeeded.
class Manifest {
 public:
  Manifest(fs::path file, std::string command, json config, std::string fingerprint, std::uint64_t seed)
      : file_(std::move(file)) {
    doc_ = json{{"command", std::move(command)},
                {"config", std::move(config)},
                {"dataset_fingerprint", std::move(fingerprint)},
                {"seed", seed},
                {"tool_version", kToolVersion},
                {"started_at", utc_now()},
                {"status", "running"}};
  }

  void begin() { write(); }
  void retarget(fs::path file) { file_ = std::move(file); }
  void finish(json outputs) {
    doc_["outputs"] = std::move(outputs);
    doc_["status"] = "ok";
    doc_["finished_at"] = utc_now();
    write();
  }

 private:
  void write() const { write_file_atomic(file_, doc_.dump(2) + "\n"); }

  fs::path file_;
  json doc_;
};

// Output directory built under "<out>.partial" and renamed into place on
// success. An existing target is only replaced if it looks like a previous
// drio output.
class Staging {
 public:
  explicit Staging(fs::path target) : target_(std::move(target)) {
    if (target_.empty()) throw ValidationError("--out must not be empty");
    if (!target_.has_filename()) target_ = target_.parent_path();
    tmp_ = target_;
    tmp_ += ".partial";
    if (fs::exists(target_) && (!fs::is_directory(target_) || !replaceable(target_))) {
      throw ValidationError("refusing to overwrite " + target_.string() + " (not a drio output directory)");
    }
    fs::remove_all(tmp_);
    fs::create_directories(tmp_);
  }
  Staging(const Staging&) = delete;
  Staging& operator=(const Staging&) = delete;
  ~Staging() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(tmp_, ec);
    }
  }

  const fs::path& dir() const { return tmp_; }
  const fs::path& target() const { return target_; }

  void commit() {
    fs::remove_all(target_);
    fs::rename(tmp_, target_);
    committed_ = true;
  }

 private:
  static bool replaceable(const fs::path& dir) {
    if (fs::is_empty(dir)) return true;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("manifest", 0) == 0 && entry.path().extension() == ".json") return true;
    }
    return false;
  }

  fs::path target_, tmp_;
  bool committed_ = false;
};

json to_json_value(const std::string& text) { return json::parse(text); }

// ---------------------------------------------------------------------------
// Training flags shared by `train` and `cv`.

struct TrainFlags {
  RunConfig defaults{};
  std::string config_path;
  double alpha = defaults.train.alpha;
  double gamma = defaults.train.gamma;
  std::size_t inner_steps = defaults.train.inner_steps;
  double inner_lr = defaults.train.inner_lr;
  double lr = defaults.train.lr;
  double weight_decay = defaults.train.weight_decay;
  double input_drop = defaults.train.input_drop;
  std::size_t batch_size = defaults.train.batch_size;
  std::size_t epochs = defaults.train.epochs;
  std::uint64_t seed = defaults.train.seed;
  std::string tau = "10";
  std::string epsilon_mode = "adaptive";
  double epsilon = defaults.train.sinkhorn.epsilon;
  std::string backbone = "mlp";
  std::size_t hidden_dim = defaults.backbone.hidden_dim;
  std::size_t layers = defaults.backbone.layers;
  std::string activation = "relu";
  std::uint64_t split_seed = 0;
  std::size_t threads = 1;

  std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> setters;

  template <typename T>
  void add(CLI::App* app, const std::string& name, T& var, const std::string& help,
           std::function<void(RunConfig&)> apply) {
    CLI::Option* opt = app->add_option(name, var, help)->capture_default_str();
    setters.emplace_back(opt, std::move(apply));
  }

  void attach(CLI::App* app, bool config_required) {
    auto* c = app->add_option("--config", config_path, "Training config JSON");
    if (config_required) c->required();
    add(app, "--alpha", alpha, "Weight of the reconstruction term", [this](RunConfig& r) { r.train.alpha = alpha; });
    add(app, "--gamma", gamma, "Transport cost multiplier", [this](RunConfig& r) { r.train.gamma = gamma; });
    add(app, "--inner-steps", inner_steps, "Adversary ascent steps K",
        [this](RunConfig& r) { r.train.inner_steps = inner_steps; });
    add(app, "--inner-lr", inner_lr, "Adversary step size", [this](RunConfig& r) { r.train.inner_lr = inner_lr; });
    add(app, "--lr", lr, "Adam learning rate", [this](RunConfig& r) { r.train.lr = lr; });
    add(app, "--weight-decay", weight_decay, "Decoupled weight decay",
        [this](RunConfig& r) { r.train.weight_decay = weight_decay; });
    add(app, "--input-drop", input_drop, "Fraction of visible entries hidden from the network input per batch",
        [this](RunConfig& r) { r.train.input_drop = input_drop; });
    add(app, "--batch-size", batch_size, "Batch size", [this](RunConfig& r) { r.train.batch_size = batch_size; });
    add(app, "--epochs", epochs, "Training epochs", [this](RunConfig& r) { r.train.epochs = epochs; });
    add(app, "--seed", seed, "Training and initialization seed", [this](RunConfig& r) {
      r.train.seed = seed;
      r.backbone.seed = seed;
    });
    add(app, "--tau", tau, "Marginal relaxation, or 'balanced'", [this](RunConfig& r) {
      r.train.sinkhorn.tau = tau == "balanced" ? SinkhornParams::kBalanced : parse_double(tau, "--tau");
    });
    add(app, "--epsilon-mode", epsilon_mode, "adaptive or fixed", [this](RunConfig& r) {
      if (epsilon_mode != "adaptive" && epsilon_mode != "fixed") {
        throw ValidationError("--epsilon-mode must be adaptive or fixed");
      }
      r.train.sinkhorn.epsilon_mode = epsilon_mode == "adaptive" ? EpsilonMode::kAdaptive : EpsilonMode::kFixed;
    });
    add(app, "--epsilon", epsilon, "Entropic regularization when fixed",
        [this](RunConfig& r) { r.train.sinkhorn.epsilon = epsilon; });
    add(app, "--backbone", backbone, "mlp or birnn",
        [this](RunConfig& r) { r.backbone.kind = parse_backbone_kind(backbone); });
    add(app, "--hidden-dim", hidden_dim, "Hidden width", [this](RunConfig& r) { r.backbone.hidden_dim = hidden_dim; });
    add(app, "--layers", layers, "Hidden layers", [this](RunConfig& r) { r.backbone.layers = layers; });
    add(app, "--activation", activation, "relu or tanh",
        [this](RunConfig& r) { r.backbone.activation = parse_activation(activation); });
    app->add_option("--split-seed", split_seed, "Seed of the 70/10/20 train/val/test split")->capture_default_str();
    app->add_option("--threads", threads, "Worker threads (DRIO_THREADS overrides)")->capture_default_str();
  }

  // defaults < config file < explicit flags
  RunConfig resolve() const {
    RunConfig cfg = defaults;
    if (!config_path.empty()) cfg = load_run_config(config_path, cfg);
    for (const auto& [opt, apply] : setters) {
      if (opt->count() > 0) apply(cfg);
    }
    cfg.train.validate();
    cfg.backbone.validate();
    return cfg;
  }

  static double parse_double(const std::string& s, const char* what) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw ValidationError(std::string(what) + ": not a number: '" + s + "'");
  }
};

// ---------------------------------------------------------------------------
// Split + normalization shared by train, cv and eval.

struct Prepared {
  TimeSeriesDataset normalized;  // whole dataset in normalized units
  SplitIndices idx;
  NormStats stats;

  TimeSeriesDataset part(const std::vector<std::size_t>& which) const { return subset(normalized, which); }
};

NormStats fit_on_visible(const TimeSeriesDataset& train_raw) {
  TimeSeriesDataset view = train_raw;
  view.raw_mask = train_raw.visible_mask();
  view.gt_mask = MaskTensor{};
  return fit_normalizer(view);
}

Prepared prepare(const TimeSeriesDataset& ds, std::uint64_t split_seed) {
  Prepared p;
  SplitSpec spec;
  spec.seed = split_seed;
  p.idx = split_indices(ds.n(), spec);
  p.stats = fit_on_visible(subset(ds, p.idx.train));
  p.normalized = apply_normalizer(ds, p.stats);
  return p;
}

Prepared prepare_with(const TimeSeriesDataset& ds, std::uint64_t split_seed, NormStats stats) {
  Prepared p;
  SplitSpec spec;
  spec.seed = split_seed;
  p.idx = split_indices(ds.n(), spec);
  p.stats = std::move(stats);
  p.normalized = apply_normalizer(ds, p.stats);
  return p;
}

std::string history_csv(const std::vector<LossReport>& history) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,batch,recon,sinkhorn,total\n";
  for (const LossReport& r : history) {
    os << r.epoch << ',' << r.batch_index << ',' << r.recon << ',' << r.sinkhorn_term << ',' << r.total << '\n';
  }
  return os.str();
}

fs::path normalizer_next_to(const fs::path& params) { return params.parent_path() / "normalizer.bin"; }

// ---------------------------------------------------------------------------
// Commands

struct SynthArgs {
  std::string out;
  SynthSpec spec{};
};

int cmd_synth(const SynthArgs& a) {
  a.spec.validate();
  const TimeSeriesDataset ds = synth_generate(a.spec);
  Staging stage(a.out);
  json cfg{{"n", a.spec.n_samples}, {"d", a.spec.n_features}, {"t", a.spec.n_timesteps},
           {"regimes", a.spec.n_regimes}, {"noise", a.spec.noise_std}, {"mixing", a.spec.mixing_strength}};
  Manifest manifest(stage.dir() / "manifest.synth.json", "synth", cfg, "", a.spec.seed);
  manifest.begin();
  save_dataset(ds, stage.dir());
  manifest.finish(json{{"dataset", stage.target().string()}, {"fingerprint", fingerprint(stage.dir())}});
  stage.commit();
  std::cout << "wrote " << stage.target().string() << "\n";
  return 0;
}

struct MaskArgs {
  std::string data, mechanism = "mcar";
  double ratio = 0.5;
  std::uint64_t seed = 0;
};

int cmd_mask(const MaskArgs& a) {
  MissingSpec spec;
  spec.mechanism = parse_mechanism(a.mechanism);
  spec.ratio = a.ratio;
  spec.seed = a.seed;
  spec.validate();
  if (!fs::is_directory(a.data)) throw ValidationError("mask: --data must be a dataset directory");
  TimeSeriesDataset ds = load_dataset(a.data);
  Manifest manifest(fs::path(a.data) / "manifest.mask.json", "mask",
                    json{{"mechanism", a.mechanism}, {"ratio", a.ratio}}, fingerprint(a.data), a.seed);
  manifest.begin();
  const MaskPair pair = apply_missingness(ds, spec);
  save_gt_mask(pair.gt_mask, a.data);
  const std::size_t hidden = count_ones(pair.raw_mask) - count_ones(pair.gt_mask);
  manifest.finish(json{{"gtmask", (fs::path(a.data) / "gtmask.bin").string()}, {"hidden_entries", hidden}});
  std::cout << "hid " << hidden << " of " << count_ones(pair.raw_mask) << " observed entries\n";
  return 0;
}

int cmd_train(const std::string& data, const std::string& out, const TrainFlags& flags) {
  RunConfig cfg = flags.resolve();
  const TimeSeriesDataset ds = load_dataset(data);
  cfg.backbone.n_features = ds.shape().d;
  Staging stage(out);
  json cfg_json = to_json_value(run_config_json(cfg));
  cfg_json["split_seed"] = flags.split_seed;
  Manifest manifest(stage.dir() / "manifest.json", "train", cfg_json, fingerprint(data), cfg.train.seed);
  manifest.begin();

  const Prepared prep = prepare(ds, flags.split_seed);
  const TrainResult result = train(prep.part(prep.idx.train), cfg.train, cfg.backbone);

  save_params(result.params, stage.dir() / "params.bin");
  save_norm_stats(prep.stats, stage.dir() / "normalizer.bin");
  write_file_atomic(stage.dir() / "loss_history.csv", history_csv(result.history));
  write_file_atomic(stage.dir() / "config.json", cfg_json.dump(2) + "\n");
  manifest.finish(json{{"params", "params.bin"},
                       {"params_fingerprint", fingerprint(stage.dir() / "params.bin")},
                       {"normalizer", "normalizer.bin"},
                       {"loss_history", "loss_history.csv"},
                       {"batches", result.history.size()}});
  stage.commit();
  std::cout << "trained " << result.history.size() << " batches; wrote " << stage.target().string() << "\n";
  return 0;
}

int cmd_impute(const std::string& data, const std::string& params_path, const std::string& out) {
  const TimeSeriesDataset ds = load_dataset(data);
  const ImputerParams params = load_params(params_path);
  const NormStats stats = load_norm_stats(normalizer_next_to(params_path));
  if (params.spec.n_features != ds.shape().d) throw ValidationError("impute: dataset D does not match params");
  const fs::path out_path(out);
  fs::path manifest_path = out_path;
  manifest_path += ".manifest.json";
  Manifest manifest(manifest_path, "impute", json{{"params", params_path}}, fingerprint(data), params.spec.seed);
  manifest.begin();
  const TimeSeriesDataset norm = apply_normalizer(ds, stats);
  const RealTensor imputed = invert_normalizer(impute_dataset(norm, params).x_hat, stats);
  std::ostringstream os(std::ios::binary);
  write_f64_le(os, imputed.storage());
  write_file_atomic(out_path, os.str());
  manifest.finish(json{{"imputed", out_path.string()},
                       {"shape", {ds.shape().n, ds.shape().d, ds.shape().t}},
                       {"layout", "sample-major [N][D][T] little-endian f64"}});
  std::cout << "wrote " << out_path.string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string data, params, baseline, out, split = "test", label = "model";
  std::uint64_t split_seed = 0;
};

int cmd_eval(const EvalArgs& a) {
  const TimeSeriesDataset ds = load_dataset(a.data);
  if (!ds.has_gt_mask()) throw ValidationError("no artificial mask (run `drio mask` first)");
  if (!a.baseline.empty() && a.baseline != "mean") throw ValidationError("--baseline must be 'mean'");
  if (a.split != "test" && a.split != "val") throw ValidationError("--split must be test or val");
  const ImputerParams params = load_params(a.params);
  if (params.spec.n_features != ds.shape().d) throw ValidationError("eval: dataset D does not match params");
  const Prepared prep = prepare_with(ds, a.split_seed, load_norm_stats(normalizer_next_to(a.params)));
  const Split which = a.split == "val" ? Split::kVal : Split::kTest;
  const TimeSeriesDataset part = prep.part(which == Split::kVal ? prep.idx.val : prep.idx.test);

  const fs::path out_dir = a.out.empty() ? fs::path(a.params).parent_path() : fs::path(a.out);
  fs::create_directories(out_dir.empty() ? fs::path(".") : out_dir);
  Manifest manifest(out_dir / "manifest.eval.json", "eval",
                    json{{"params", a.params}, {"split", a.split}, {"split_seed", a.split_seed},
                         {"baseline", a.baseline}},
                    fingerprint(a.data), a.split_seed);
  manifest.begin();

  std::vector<std::pair<std::string, EvalReport>> rows;
  rows.emplace_back(a.label, evaluate(part, params, which));
  if (a.baseline == "mean") rows.emplace_back("mean", evaluate_mean_baseline(part, which));
  std::string csv = eval_csv_header() + "\n";
  for (const auto& [name, rep] : rows) csv += eval_csv_row(name, rep) + "\n";
  const std::string md = pareto_markdown(pareto_table(rows));
  write_file_atomic(out_dir / "eval.csv", csv);
  write_file_atomic(out_dir / "pareto.md", md);
  manifest.finish(json{{"csv", "eval.csv"}, {"pareto", "pareto.md"}});
  std::cout << csv << "\n" << md;
  return 0;
}

int cmd_cv(const std::string& data, const std::string& grid_path, const std::string& mode_name,
           const std::string& out, const TrainFlags& flags) {
  const CvMode mode = parse_cv_mode(mode_name);
  RunConfig base = flags.resolve();
  const TimeSeriesDataset ds = load_dataset(data);
  base.backbone.n_features = ds.shape().d;
  GridSpec grid = load_grid(grid_path, base);
  grid.backbone.n_features = ds.shape().d;
  if (mode == CvMode::kOracle && !ds.has_gt_mask()) throw ValidationError("cv: oracle mode needs an artificial mask");
  Staging stage(out);
  json cfg_json = to_json_value(run_config_json(RunConfig{grid.base, grid.backbone}));
  cfg_json["alphas"] = grid.alphas;
  cfg_json["gammas"] = grid.gammas;
  cfg_json["mode"] = mode_name;
  cfg_json["split_seed"] = flags.split_seed;
  Manifest manifest(stage.dir() / "manifest.json", "cv", cfg_json, fingerprint(data), grid.base.seed);
  manifest.begin();

  const Prepared prep = prepare(ds, flags.split_seed);
  const CVResult result = grid_search(prep.part(prep.idx.train), prep.part(prep.idx.val), grid, mode,
                                      resolve_threads(flags.threads));
  write_file_atomic(stage.dir() / "cv_results.csv", cv_csv(result));
  const CellRecord& best = select_best(result);

  RunConfig best_cfg{grid.base, grid.backbone};
  best_cfg.train.alpha = best.alpha;
  best_cfg.train.gamma = best.gamma;
  json selected{{"alpha", best.alpha},
                {"gamma", best.gamma},
                {"mode", mode_name},
                {"criterion", criterion(best, mode)},
                {"recon_val_mse", best.recon_val_mse}};
  if (std::isfinite(best.oracle_val_mse)) selected["oracle_val_mse"] = best.oracle_val_mse;
  write_file_atomic(stage.dir() / "selected.json", selected.dump(2) + "\n");
  write_file_atomic(stage.dir() / "best_config.json", run_config_json(best_cfg) + "\n");
  save_params(best.params, stage.dir() / "params.bin");
  save_norm_stats(prep.stats, stage.dir() / "normalizer.bin");
  manifest.finish(json{{"cv_results", "cv_results.csv"},
                       {"selected", "selected.json"},
                       {"best_config", "best_config.json"},
                       {"params", "params.bin"}});
  stage.commit();
  std::cout << "selected alpha=" << best.alpha << " gamma=" << best.gamma << "; wrote " << stage.target().string()
            << "\n";
  return 0;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"Distributionally robust time-series imputation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a regime-switching synthetic dataset");
  s->add_option("--out", synth.out, "Output dataset directory")->required();
  s->add_option("--n", synth.spec.n_samples, "Samples")->capture_default_str();
  s->add_option("--d", synth.spec.n_features, "Features")->capture_default_str();
  s->add_option("--t", synth.spec.n_timesteps, "Timesteps")->capture_default_str();
  s->add_option("--regimes", synth.spec.n_regimes, "Number of regimes")->capture_default_str();
  s->add_option("--noise", synth.spec.noise_std, "Gaussian noise std")->capture_default_str();
  s->add_option("--mixing", synth.spec.mixing_strength, "Cross-feature mixing strength")->capture_default_str();
  s->add_option("--seed", synth.spec.seed, "Seed")->capture_default_str();

  MaskArgs mask;
  auto* m = app.add_subcommand("mask", "Hide observed entries (writes gtmask.bin into the dataset)");
  m->add_option("--data", mask.data, "Dataset directory")->required();
  m->add_option("--mechanism", mask.mechanism, "mcar or mnar")->capture_default_str();
  m->add_option("--ratio", mask.ratio, "Fraction of each sample's observed entries to hide")->capture_default_str();
  m->add_option("--seed", mask.seed, "Seed")->capture_default_str();

  std::string train_data, train_out;
  TrainFlags train_flags;
  auto* t = app.add_subcommand("train", "Train an imputer on the training split");
  t->add_option("--data", train_data, "Dataset directory or CSV")->required();
  t->add_option("--out", train_out, "Run directory")->required();
  train_flags.attach(t, false);

  std::string imp_data, imp_params, imp_out = "imputed.bin";
  auto* im = app.add_subcommand("impute", "Impute every sample, in original units");
  im->add_option("--data", imp_data, "Dataset directory or CSV")->required();
  im->add_option("--params", imp_params, "params.bin (normalizer.bin must sit next to it)")->required();
  im->add_option("--out", imp_out, "Output file of little-endian f64")->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Metrics on the artificially hidden entries of one split");
  e->add_option("--data", ev.data, "Dataset directory or CSV with gtmask")->required();
  e->add_option("--params", ev.params, "params.bin (normalizer.bin must sit next to it)")->required();
  e->add_option("--baseline", ev.baseline, "Also report a baseline: mean");
  e->add_option("--split", ev.split, "test or val")->capture_default_str();
  e->add_option("--split-seed", ev.split_seed, "Seed of the 70/10/20 split")->capture_default_str();
  e->add_option("--label", ev.label, "Method label in the CSV")->capture_default_str();
  e->add_option("--out", ev.out, "Directory for eval.csv and pareto.md (default: next to params)");

  std::string cv_data, cv_grid, cv_mode = "reconstruction", cv_out;
  TrainFlags cv_flags;
  auto* c = app.add_subcommand("cv", "Grid search over (alpha, gamma)");
  c->add_option("--data", cv_data, "Dataset directory or CSV")->required();
  c->add_option("--grid", cv_grid, "Grid JSON: {alphas, gammas, ...config keys}")->required();
  c->add_option("--mode", cv_mode, "reconstruction or oracle")->capture_default_str();
  c->add_option("--out", cv_out, "Output directory")->required();
  cv_flags.attach(c, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  if (*s) return cmd_synth(synth);
  if (*m) return cmd_mask(mask);
  if (*t) return cmd_train(train_data, train_out, train_flags);
  if (*im) return cmd_impute(imp_data, imp_params, imp_out);
  if (*e) return cmd_eval(ev);
  if (*c) return cmd_cv(cv_data, cv_grid, cv_mode, cv_out, cv_flags);
  return 1;
}

}  // namespace

int run(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

int run(const std::vector<std::string>& args) {
  std::vector<std::string> copy = args;
  std::vector<char*> argv;
  for (auto& a : copy) argv.push_back(a.data());
  argv.push_back(nullptr);
  return run(static_cast<int>(copy.size()), argv.data());
}

}  // namespace drio::cli
