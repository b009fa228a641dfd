#include "sgld/presets.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace sgld::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "sgldlab 0.1.0";

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

void atomic_write(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
  }
  fs::rename(tmp, path);
}

std::string activation_name(models::Activation act) {
  return act == models::Activation::kTanh ? "tanh" : "relu";
}

models::Activation activation_from_name(const std::string& name) {
  if (name == "tanh") return models::Activation::kTanh;
  if (name == "relu") return models::Activation::kRelu;
  throw std::runtime_error("unknown activation: " + name);
}

std::string budget_mode_name(noise::TraceBudget::Mode mode) {
  switch (mode) {
    case noise::TraceBudget::Mode::kAbsolute: return "absolute";
    case noise::TraceBudget::Mode::kScaleOfSqrtCov: return "scale_of_sqrt_cov";
    case noise::TraceBudget::Mode::kScaleOfCov: return "scale_of_cov";
  }
  return "unknown";
}

noise::TraceBudget::Mode budget_mode_from_name(const std::string& name) {
  if (name == "absolute") return noise::TraceBudget::Mode::kAbsolute;
  if (name == "scale_of_sqrt_cov") return noise::TraceBudget::Mode::kScaleOfSqrtCov;
  if (name == "scale_of_cov") return noise::TraceBudget::Mode::kScaleOfCov;
  throw std::runtime_error("unknown budget mode: " + name);
}

noise::Structure structure_from_name(const std::string& name) {
  for (noise::Structure s :
       {noise::Structure::kIsotropic, noise::Structure::kIsoTraceMatched,
        noise::Structure::kIsoHessianMatched, noise::Structure::kEmpiricalCov,
        noise::Structure::kSqrtEmpiricalCov, noise::Structure::kSqrtPopulationCov,
        noise::Structure::kFixedPriorOptimal})
    if (noise::structure_name(s) == name) return s;
  throw std::runtime_error("unknown noise structure: " + name);
}

struct BuiltData {
  models::Dataset train;
  models::Dataset test;
  models::Dataset pool;
};

fs::path find_idx_file(const fs::path& dir, const std::string& stem) {
  for (const std::string& suffix : {std::string(""), std::string(".gz")}) {
    const fs::path candidate = dir / (stem + suffix);
    if (fs::exists(candidate)) return candidate;
  }
  throw std::runtime_error("load_idx: missing " + (dir / stem).string() + "[.gz]");
}

BuiltData build_data(const DatasetSpec& spec, std::uint64_t seed) {
  const linalg::Rng base(seed);
  BuiltData data;
  if (spec.kind == DatasetSpec::Kind::kSynthetic) {
    linalg::Rng train_rng = base.split(10);
    linalg::Rng test_rng = base.split(11);
    linalg::Rng pool_rng = base.split(12);
    data.train = models::synth_blobs(train_rng, spec.classes, spec.dim, spec.train_count, spec.spread);
    data.test = models::synth_blobs(test_rng, spec.classes, spec.dim, spec.test_count, spec.spread);
    data.pool = models::synth_blobs(pool_rng, spec.classes, spec.dim, spec.pool_count, spec.spread);
    if (spec.feature_scale != 1.0) {
      for (double& f : data.train.features) f *= spec.feature_scale;
      for (double& f : data.test.features) f *= spec.feature_scale;
      for (double& f : data.pool.features) f *= spec.feature_scale;
    }
    return data;
  }
  const fs::path dir(spec.idx_dir);
  const models::Dataset train_full = models::load_idx(find_idx_file(dir, "train-images-idx3-ubyte").string(),
                                                      find_idx_file(dir, "train-labels-idx1-ubyte").string());
  const models::Dataset test_full = models::load_idx(find_idx_file(dir, "t10k-images-idx3-ubyte").string(),
                                                     find_idx_file(dir, "t10k-labels-idx1-ubyte").string());
  linalg::Rng train_rng = base.split(10);
  linalg::Rng test_rng = base.split(11);
  linalg::Rng pool_rng = base.split(12);
  data.train = models::subsample(train_full, std::min(spec.train_count, train_full.count), train_rng);
  data.test = models::subsample(test_full, std::min(spec.test_count, test_full.count), test_rng);
  data.pool = models::subsample(train_full, std::min(spec.pool_count, train_full.count), pool_rng);
  return data;
}

std::string scale_suffix(double scale) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%g", scale);
  return buf;
}

json manifest_json(const ExperimentConfig& config, const RunResult& result,
                   const std::string& started, const std::string& finished, int param_count) {
  const auto& t = config.train;
  json manifest;
  manifest["version"] = kVersion;
  manifest["mode"] = dynamics::mode_name(result.mode);
  manifest["seed"] = result.seed;
  manifest["trace_scale"] = result.trace_scale;
  json dataset;
  dataset["kind"] = config.dataset.kind == DatasetSpec::Kind::kSynthetic ? "synthetic" : "idx";
  dataset["classes"] = config.dataset.classes;
  dataset["dim"] = config.dataset.dim;
  dataset["train"] = config.dataset.train_count;
  dataset["test"] = config.dataset.test_count;
  dataset["pool"] = config.dataset.pool_count;
  dataset["spread"] = config.dataset.spread;
  dataset["feature_scale"] = config.dataset.feature_scale;
  if (config.dataset.kind == DatasetSpec::Kind::kIdx) dataset["idx_dir"] = config.dataset.idx_dir;
  manifest["dataset"] = dataset;
  manifest["model"] = {{"widths", t.model.layer_widths}, {"activation", activation_name(t.model.activation)}};
  manifest["param_count"] = param_count;
  manifest["loss_range"] = {t.loss.floor, t.loss.clip};
  manifest["train"] = {{"eta", t.eta},
                       {"batch", t.batch},
                       {"epochs", t.epochs},
                       {"steps", t.steps},
                       {"warmup_epochs", t.warmup_epochs},
                       {"refresh_period_epochs", t.refresh_period_epochs},
                       {"log_every", t.log_every},
                       {"topk", t.topk},
                       {"hutchinson_probes", t.hutchinson_probes}};
  manifest["noise"] = {{"structure", noise::structure_name(t.noise.structure)},
                       {"budget_mode", budget_mode_name(t.noise.budget.mode)},
                       {"budget_value", t.noise.budget.value * result.trace_scale},
                       {"freeze_budget", t.noise.freeze_budget},
                       {"isotropic_sigma", t.noise.isotropic_sigma},
                       {"prior_sigma", t.prior_sigma}};
  manifest["bound"] = {{"expected_hit", t.expected_hit},
                       {"pop_proxy", t.pop_proxy_plugin ? "plugin" : "pool"}};
  manifest["started_utc"] = started;
  manifest["finished_utc"] = finished;
  manifest["failed"] = result.trajectory.failed;
  if (result.trajectory.failed) manifest["failure_reason"] = result.trajectory.failure_reason;
  return manifest;
}

void write_run_outputs(const ExperimentConfig& config, const RunResult& result,
                       const std::string& started, const std::string& finished) {
  const fs::path dir(result.run_dir);
  fs::create_directories(dir);

  std::ostringstream csv;
  csv << csv_header() << "\n";
  for (const auto& rec : result.trajectory.records) {
    csv << rec.step << "," << rec.epoch << "," << dynamics::mode_name(result.mode) << ","
        << result.seed << "," << fmt_double(rec.train_loss) << "," << fmt_double(rec.test_loss) << ","
        << fmt_double(rec.gen_err) << "," << fmt_double(rec.bound_estimate) << ","
        << fmt_double(rec.noise_trace) << "," << fmt_double(rec.eigen_ratio) << ","
        << fmt_double(rec.wall_ms) << "\n";
  }
  atomic_write(dir / "metrics.csv", csv.str());

  const int param_count = config.train.model.param_count();
  atomic_write(dir / "manifest.json",
               manifest_json(config, result, started, finished, param_count).dump(2) + "\n");

  json ledger;
  ledger["loss_range"] = {result.trajectory.ledger.loss_floor(), result.trajectory.ledger.loss_clip()};
  json steps = json::array();
  json kl_values = json::array();
  std::string variant = "none";
  for (const auto& entry : result.trajectory.ledger.entries()) {
    steps.push_back(entry.step);
    kl_values.push_back(entry.kl_value);
    variant = bound::variant_name(entry.variant);
  }
  ledger["variant"] = variant;
  ledger["steps"] = std::move(steps);
  ledger["kl_values"] = std::move(kl_values);
  ledger["bound"] = bound::accumulate_bound(result.trajectory.ledger);
  atomic_write(dir / "ledger.json", ledger.dump(2) + "\n");
}

// Spectral-ratio control: empirical covariance of iid isotropic "gradients"
// at the same parameter dimension, reported through the same CSV contract.
void write_wishart_control(const ExperimentConfig& config, std::uint64_t seed,
                           const std::string& out_dir) {
  const int d = config.train.model.param_count();
  const int n = 4 * d;  // deep in the concentration regime so the ratio stays near 1
  const int refreshes = std::max(1, config.train.epochs / config.train.refresh_period_epochs + 1);
  linalg::Rng rng = linalg::Rng(seed).split(77);

  RunResult result;
  result.mode = dynamics::Mode::kSgd;
  result.seed = seed;
  result.trace_scale = 1.0;

  std::ostringstream csv;
  csv << csv_header() << "\n";
  const int ratio_k = std::clamp(std::max(2, d / 20), 2, std::min(n, d));
  for (int r = 0; r < refreshes; ++r) {
    gradstats::GradBatch batch;
    batch.count = n;
    batch.dim = d;
    batch.rows.resize(static_cast<std::size_t>(n) * d);
    for (double& x : batch.rows) x = rng.gaussian();
    const gradstats::GradCovariance cov = gradstats::empirical_grad_cov(batch);
    const double ratio = gradstats::eigen_ratio(cov, 1, ratio_k);
    csv << r << "," << r * config.train.refresh_period_epochs << ",wishart_control," << seed
        << ",0,0,0,0,0," << fmt_double(ratio) << ",0\n";
  }
  const fs::path dir = fs::path(out_dir) / ("eigen-ratio_wishart_control_s" + std::to_string(seed));
  fs::create_directories(dir);
  atomic_write(dir / "metrics.csv", csv.str());

  json manifest;
  manifest["version"] = kVersion;
  manifest["mode"] = "wishart_control";
  manifest["seed"] = seed;
  manifest["trace_scale"] = 1.0;
  manifest["param_count"] = d;
  manifest["control_samples"] = n;
  manifest["started_utc"] = utc_now();
  manifest["finished_utc"] = utc_now();
  manifest["failed"] = false;
  atomic_write(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace

std::string DatasetSpec::describe() const {
  if (kind == Kind::kSynthetic)
    return "blobs(classes=" + std::to_string(classes) + ",dim=" + std::to_string(dim) +
           ",n=" + std::to_string(train_count) + ")";
  return "idx:" + idx_dir;
}

std::string csv_header() {
  return "step,epoch,mode,seed,train_loss,test_loss,gen_err,bound_estimate,noise_trace,eigen_ratio,wall_ms";
}

// Desk-scale defaults shared by the presets. The synthetic task is small
// Gaussian blobs with enough class overlap that an over-capacity MLP
// memorizes the training set and carries a visible generalization gap; the
// feature scale and learning rate are chosen together so SGD trains cleanly
// while the injected noise budgets stay in a regime where every structure
// keeps training (see README for the calibration notes).
ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig config;
  config.dataset.kind = DatasetSpec::Kind::kSynthetic;
  config.dataset.classes = 4;
  config.dataset.dim = 20;
  config.dataset.spread = 1.45;
  config.dataset.feature_scale = 0.25;
  config.dataset.train_count = 256;
  config.dataset.test_count = 1024;
  config.dataset.pool_count = 1024;
  config.train.model = models::ModelSpec::mlp({20, 12, 8, 4});
  config.train.loss = models::LossSpec{};
  config.train.eta = 2.0;
  config.train.batch = 64;
  config.train.epochs = 150;
  config.train.warmup_epochs = 50;
  config.train.refresh_period_epochs = 10;
  config.train.log_every = 25;
  config.train.topk = 100;
  config.train.noise.budget = noise::TraceBudget::scale_of_sqrt_cov(1.0);
  config.seeds = {1, 2, 3, 4, 5};
  config.trace_scales = {1.0};

  if (name == "iso-vs-srec") {
    config.modes = {dynamics::Mode::kSgd, dynamics::Mode::kIso, dynamics::Mode::kSrec};
  } else if (name == "trace-constraint") {
    config.dataset.train_count = 1200;
    config.dataset.test_count = 1024;
    config.train.model = models::ModelSpec::mlp({20, 16, 10, 4});
    config.train.epochs = 110;
    config.train.warmup_epochs = 30;
    config.train.noise.budget = noise::TraceBudget::scale_of_cov(1.0);
    config.modes = {dynamics::Mode::kEc, dynamics::Mode::kIsoC, dynamics::Mode::kIsoH};
    config.seeds = {1, 2, 3, 4};
  } else if (name == "trace-scales") {
    config.modes = {dynamics::Mode::kIso, dynamics::Mode::kSrec, dynamics::Mode::kEc};
    config.trace_scales = {1.0, 5.0};
  } else if (name == "eigen-ratio") {
    config.modes = {dynamics::Mode::kSgd, dynamics::Mode::kIso};
    config.seeds = {1, 2};
  } else if (name == "ec-vs-srec") {
    config.modes = {dynamics::Mode::kIso, dynamics::Mode::kEc, dynamics::Mode::kSrec};
    config.trace_scales = {5.0};
  } else {
    throw std::invalid_argument("unknown preset: " + name);
  }
  return config;
}

RunResult execute_run(const ExperimentConfig& config, dynamics::Mode mode, std::uint64_t seed,
                      double trace_scale, const std::string& out_dir, bool write_outputs) {
  const std::string started = utc_now();
  BuiltData data = build_data(config.dataset, seed);

  dynamics::TrainConfig train = config.train;
  train.seed = seed;
  train.noise.budget.value *= trace_scale;

  RunResult result;
  result.mode = mode;
  result.seed = seed;
  result.trace_scale = trace_scale;
  result.trajectory = dynamics::run_training(train, data.train, data.test, mode, &data.pool);

  std::string run_name = dynamics::mode_name(mode) + "_s" + std::to_string(seed);
  if (config.trace_scales.size() > 1) run_name += "_x" + scale_suffix(trace_scale);
  result.run_dir = (fs::path(out_dir) / run_name).string();

  if (write_outputs) write_run_outputs(config, result, started, utc_now());
  return result;
}

int run_preset(const std::string& name, const PresetOptions& options) {
  const bool known = std::any_of(std::begin(kPresetNames), std::end(kPresetNames),
                                 [&](const char* preset) { return name == preset; });
  if (!known) {
    std::cerr << "unknown preset: " << name << "\n";
    return 2;
  }
  ExperimentConfig config = options.config_path ? load_config(*options.config_path) : preset_config(name);
  if (options.seeds) config.seeds = *options.seeds;
  if (options.trace_scale) config.trace_scales = {*options.trace_scale};
  if (options.log_every) config.train.log_every = *options.log_every;
  if (options.dataset) {
    if (*options.dataset == "synthetic") {
      config.dataset.kind = DatasetSpec::Kind::kSynthetic;
    } else if (options.dataset->rfind("idx:", 0) == 0) {
      config.dataset.kind = DatasetSpec::Kind::kIdx;
      config.dataset.idx_dir = options.dataset->substr(4);
      config.dataset.classes = 10;
      config.dataset.dim = 784;
      config.train.model = models::ModelSpec::mlp({784, 32, 16, 10});
      config.dataset.train_count = std::min(config.dataset.train_count, 1000);
    } else {
      std::cerr << "unknown dataset spec: " << *options.dataset << "\n";
      return 2;
    }
  }

  struct Job {
    dynamics::Mode mode;
    std::uint64_t seed;
    double scale;
  };
  std::vector<Job> jobs;
  for (double scale : config.trace_scales)
    for (dynamics::Mode mode : config.modes)
      for (std::uint64_t seed : config.seeds) jobs.push_back({mode, seed, scale});

  const fs::path out_root = fs::path(options.out_dir) / name;
  fs::create_directories(out_root);

  std::mutex mutex;
  std::size_t next = 0;
  bool any_failed = false;
  auto worker = [&]() {
    for (;;) {
      Job job;
      {
        std::lock_guard<std::mutex> lock(mutex);
        if (next >= jobs.size()) return;
        job = jobs[next++];
      }
      try {
        const RunResult result =
            execute_run(config, job.mode, job.seed, job.scale, out_root.string(), true);
        if (result.trajectory.failed) {
          std::lock_guard<std::mutex> lock(mutex);
          any_failed = true;
          std::cerr << "run " << result.run_dir << " failed: " << result.trajectory.failure_reason
                    << "\n";
        }
      } catch (const std::exception& err) {
        std::lock_guard<std::mutex> lock(mutex);
        any_failed = true;
        std::cerr << "run (" << dynamics::mode_name(job.mode) << ", seed " << job.seed
                  << ") failed: " << err.what() << "\n";
      }
    }
  };

  const int worker_count = std::max(1, std::min<int>(options.workers, static_cast<int>(jobs.size())));
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(worker_count));
  for (int i = 0; i < worker_count; ++i) threads.emplace_back(worker);
  for (auto& t : threads) t.join();

  if (name == "eigen-ratio")
    for (std::uint64_t seed : config.seeds) write_wishart_control(config, seed, out_root.string());

  return any_failed ? 1 : 0;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& err) {
    throw std::runtime_error("config parse error in " + path + ": " + err.what());
  }

  ExperimentConfig config = preset_config("iso-vs-srec");  // defaults
  config.modes.clear();

  if (doc.contains("dataset")) {
    const auto& d = doc["dataset"];
    const std::string kind = d.value("kind", "synthetic");
    if (kind == "synthetic") {
      config.dataset.kind = DatasetSpec::Kind::kSynthetic;
    } else if (kind == "idx") {
      config.dataset.kind = DatasetSpec::Kind::kIdx;
      config.dataset.idx_dir = d.value("idx_dir", "");
    } else {
      throw std::runtime_error("unknown dataset kind: " + kind);
    }
    config.dataset.classes = d.value("classes", config.dataset.classes);
    config.dataset.dim = d.value("dim", config.dataset.dim);
    config.dataset.train_count = d.value("train", config.dataset.train_count);
    config.dataset.test_count = d.value("test", config.dataset.test_count);
    config.dataset.pool_count = d.value("pool", config.dataset.pool_count);
    config.dataset.spread = d.value("spread", config.dataset.spread);
    config.dataset.feature_scale = d.value("feature_scale", config.dataset.feature_scale);
  }
  if (doc.contains("model")) {
    const auto& m = doc["model"];
    if (m.contains("widths")) config.train.model.layer_widths = m["widths"].get<std::vector<int>>();
    config.train.model.activation = activation_from_name(m.value("activation", "tanh"));
  }
  if (doc.contains("loss")) {
    config.train.loss.clip = doc["loss"].value("clip", config.train.loss.clip);
    config.train.loss.floor = doc["loss"].value("floor", config.train.loss.floor);
  }
  if (doc.contains("train")) {
    const auto& t = doc["train"];
    config.train.eta = t.value("eta", config.train.eta);
    config.train.batch = t.value("batch", config.train.batch);
    config.train.epochs = t.value("epochs", config.train.epochs);
    config.train.steps = t.value("steps", config.train.steps);
    config.train.warmup_epochs = t.value("warmup_epochs", config.train.warmup_epochs);
    config.train.refresh_period_epochs = t.value("refresh_period_epochs", config.train.refresh_period_epochs);
    config.train.log_every = t.value("log_every", config.train.log_every);
    config.train.topk = t.value("topk", config.train.topk);
    config.train.hutchinson_probes = t.value("hutchinson_probes", config.train.hutchinson_probes);
  }
  if (doc.contains("noise")) {
    const auto& n = doc["noise"];
    if (n.contains("structure")) config.train.noise.structure = structure_from_name(n["structure"]);
    if (n.contains("budget_mode")) config.train.noise.budget.mode = budget_mode_from_name(n["budget_mode"]);
    config.train.noise.budget.value = n.value("budget_value", config.train.noise.budget.value);
    config.train.noise.freeze_budget = n.value("freeze_budget", config.train.noise.freeze_budget);
    config.train.noise.isotropic_sigma = n.value("isotropic_sigma", config.train.noise.isotropic_sigma);
    config.train.prior_sigma = n.value("prior_sigma", config.train.prior_sigma);
    config.train.noise.prior_sigma = config.train.prior_sigma;
  }
  if (doc.contains("bound")) {
    const auto& b = doc["bound"];
    config.train.expected_hit = b.value("expected_hit", config.train.expected_hit);
    config.train.pop_proxy_plugin = b.value("pop_proxy", std::string("plugin")) == "plugin";
  }
  if (doc.contains("modes")) {
    for (const auto& entry : doc["modes"]) {
      const auto mode = dynamics::mode_from_name(entry.get<std::string>());
      if (!mode) throw std::runtime_error("unknown mode: " + entry.get<std::string>());
      config.modes.push_back(*mode);
    }
  }
  if (doc.contains("seeds")) config.seeds = doc["seeds"].get<std::vector<std::uint64_t>>();
  if (doc.contains("trace_scales")) config.trace_scales = doc["trace_scales"].get<std::vector<double>>();
  return config;
}

void save_config(const ExperimentConfig& config, const std::string& path) {
  json doc;
  json dataset;
  dataset["kind"] = config.dataset.kind == DatasetSpec::Kind::kSynthetic ? "synthetic" : "idx";
  dataset["classes"] = config.dataset.classes;
  dataset["dim"] = config.dataset.dim;
  dataset["train"] = config.dataset.train_count;
  dataset["test"] = config.dataset.test_count;
  dataset["pool"] = config.dataset.pool_count;
  dataset["spread"] = config.dataset.spread;
  dataset["feature_scale"] = config.dataset.feature_scale;
  if (config.dataset.kind == DatasetSpec::Kind::kIdx) dataset["idx_dir"] = config.dataset.idx_dir;
  doc["dataset"] = dataset;
  doc["model"] = {{"widths", config.train.model.layer_widths},
                  {"activation", activation_name(config.train.model.activation)}};
  doc["loss"] = {{"clip", config.train.loss.clip}, {"floor", config.train.loss.floor}};
  doc["train"] = {{"eta", config.train.eta},
                  {"batch", config.train.batch},
                  {"epochs", config.train.epochs},
                  {"steps", config.train.steps},
                  {"warmup_epochs", config.train.warmup_epochs},
                  {"refresh_period_epochs", config.train.refresh_period_epochs},
                  {"log_every", config.train.log_every},
                  {"topk", config.train.topk},
                  {"hutchinson_probes", config.train.hutchinson_probes}};
  doc["noise"] = {{"structure", noise::structure_name(config.train.noise.structure)},
                  {"budget_mode", budget_mode_name(config.train.noise.budget.mode)},
                  {"budget_value", config.train.noise.budget.value},
                  {"freeze_budget", config.train.noise.freeze_budget},
                  {"isotropic_sigma", config.train.noise.isotropic_sigma},
                  {"prior_sigma", config.train.prior_sigma}};
  doc["bound"] = {{"expected_hit", config.train.expected_hit},
                  {"pop_proxy", config.train.pop_proxy_plugin ? "plugin" : "pool"}};
  json modes = json::array();
  for (dynamics::Mode mode : config.modes) modes.push_back(dynamics::mode_name(mode));
  doc["modes"] = modes;
  doc["seeds"] = config.seeds;
  doc["trace_scales"] = config.trace_scales;
  atomic_write(path, doc.dump(2) + "\n");
}

ValidationReport validate_config(const std::string& path) {
  const ExperimentConfig config = load_config(path);
  ValidationReport report;
  auto flag = [&](const std::string& message) { report.violations.push_back(message); };

  if (config.train.model.layer_widths.size() < 2) flag("model.widths needs at least two entries");
  for (int w : config.train.model.layer_widths)
    if (w <= 0) {
      flag("model.widths entries must be positive");
      break;
    }
  if (!(config.train.eta > 0.0)) flag("train.eta must be positive");
  if (config.train.batch < 1) flag("train.batch must be at least 1");
  if (config.train.batch > config.dataset.train_count)
    flag("train.batch exceeds the training set size (b > N)");
  if (config.train.epochs <= 0 && config.train.steps <= 0)
    flag("train.epochs or train.steps must be positive");
  if (!(config.train.loss.clip > config.train.loss.floor)) flag("loss.clip must exceed loss.floor");
  if (!(config.train.noise.budget.value > 0.0)) flag("noise.budget_value must be positive");
  if (config.seeds.empty()) flag("seeds must be nonempty");
  if (config.modes.empty()) flag("modes must be nonempty");

  if (config.train.noise.structure == noise::Structure::kFixedPriorOptimal) {
    if (!(config.train.prior_sigma > 0.0)) flag("noise.prior_sigma must be positive for the fixed-prior structure");
    if (config.train.noise.budget.mode == noise::TraceBudget::Mode::kAbsolute) {
      const double d = config.train.model.param_count();
      if (config.train.noise.budget.value > d * config.train.prior_sigma)
        flag("noise budget violates c_t <= d * sigma_t required by the fixed-prior solution");
    }
  }
  return report;
}

std::vector<ModeSummary> summarize(const std::vector<std::string>& run_dirs,
                                   const std::string& out_csv) {
  struct Final {
    double gen_err, train_loss, bound;
  };
  std::map<std::pair<std::string, double>, std::vector<Final>> groups;

  for (const std::string& dir : run_dirs) {
    std::ifstream manifest_in(fs::path(dir) / "manifest.json");
    if (!manifest_in) throw std::runtime_error("summarize: missing manifest in " + dir);
    json manifest = json::parse(manifest_in);
    const std::string mode = manifest.value("mode", "unknown");
    const double scale = manifest.value("trace_scale", 1.0);

    std::ifstream metrics_in(fs::path(dir) / "metrics.csv");
    if (!metrics_in) throw std::runtime_error("summarize: missing metrics.csv in " + dir);
    std::string line;
    if (!std::getline(metrics_in, line) || line != csv_header())
      throw std::runtime_error("summarize: unexpected metrics schema in " + dir);
    std::string last;
    while (std::getline(metrics_in, line))
      if (!line.empty()) last = line;
    if (last.empty()) throw std::runtime_error("summarize: no metric rows in " + dir);

    std::vector<std::string> cells;
    std::stringstream ss(last);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 11) throw std::runtime_error("summarize: malformed metrics row in " + dir);
    groups[{mode, scale}].push_back(
        {std::stod(cells[6]), std::stod(cells[4]), std::stod(cells[7])});
  }

  std::vector<ModeSummary> summaries;
  for (const auto& [key, finals] : groups) {
    ModeSummary s;
    s.mode = key.first;
    s.trace_scale = key.second;
    s.runs = static_cast<int>(finals.size());
    auto stats = [&](auto getter, double& mean, double& se) {
      double sum = 0.0;
      for (const auto& f : finals) sum += getter(f);
      mean = sum / s.runs;
      double var = 0.0;
      for (const auto& f : finals) var += (getter(f) - mean) * (getter(f) - mean);
      se = s.runs > 1 ? std::sqrt(var / (s.runs - 1) / s.runs) : 0.0;
    };
    stats([](const Final& f) { return f.gen_err; }, s.gen_err_mean, s.gen_err_std_error);
    stats([](const Final& f) { return f.train_loss; }, s.train_loss_mean, s.train_loss_std_error);
    stats([](const Final& f) { return f.bound; }, s.bound_mean, s.bound_std_error);
    summaries.push_back(s);
  }

  if (!out_csv.empty()) {
    std::ostringstream csv;
    csv << "mode,trace_scale,runs,gen_err_mean,gen_err_se,train_loss_mean,train_loss_se,bound_mean,"
           "bound_se\n";
    for (const auto& s : summaries)
      csv << s.mode << "," << fmt_double(s.trace_scale) << "," << s.runs << ","
          << fmt_double(s.gen_err_mean) << "," << fmt_double(s.gen_err_std_error) << ","
          << fmt_double(s.train_loss_mean) << "," << fmt_double(s.train_loss_std_error) << ","
          << fmt_double(s.bound_mean) << "," << fmt_double(s.bound_std_error) << "\n";
    atomic_write(out_csv, csv.str());
  }
  return summaries;
}

}  // namespace sgld::cli
