#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sgld/dynamics.hpp"
#include "sgld/models.hpp"

// Experiment presets: named mode/seed fan-outs with deterministic manifests
// and CSV/JSON metric output for external plotting.

namespace sgld::cli {

struct DatasetSpec {
  enum class Kind { kSynthetic, kIdx };
  Kind kind = Kind::kSynthetic;
  // synthetic
  int classes = 4;
  int dim = 20;
  int train_count = 320;
  int test_count = 2048;
  int pool_count = 2048;
  double spread = 1.6;
  double feature_scale = 1.0;  // multiplies every generated feature
  // idx
  std::string idx_dir;

  std::string describe() const;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  dynamics::TrainConfig train;
  std::vector<dynamics::Mode> modes;
  std::vector<std::uint64_t> seeds;
  std::vector<double> trace_scales;  // one run group per scale
};

struct PresetOptions {
  std::optional<std::string> config_path;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<double> trace_scale;
  std::optional<std::string> dataset;  // "synthetic" or "idx:DIR"
  std::optional<int> log_every;
  std::string out_dir = "runs";
  int workers = 2;
};

inline constexpr const char* kPresetNames[] = {"iso-vs-srec", "trace-constraint", "trace-scales",
                                               "eigen-ratio", "ec-vs-srec"};

// Resolved configuration for a preset before overrides.
ExperimentConfig preset_config(const std::string& name);

// Runs every (mode, seed, scale) combination of the preset, writing
// metrics.csv, manifest.json and ledger.json per run directory under
// out_dir. Returns 0 on success, 1 on runtime failure, 2 on usage errors.
int run_preset(const std::string& name, const PresetOptions& options);

// Parses and checks a config file without running; violations are returned,
// parse errors throw std::runtime_error with position information.
struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};
ValidationReport validate_config(const std::string& path);

ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& config, const std::string& path);

// Per-mode final metrics aggregated across seeds.
struct ModeSummary {
  std::string mode;
  double trace_scale = 1.0;
  int runs = 0;
  double gen_err_mean = 0.0;
  double gen_err_std_error = 0.0;
  double train_loss_mean = 0.0;
  double train_loss_std_error = 0.0;
  double bound_mean = 0.0;
  double bound_std_error = 0.0;
};

std::vector<ModeSummary> summarize(const std::vector<std::string>& run_dirs,
                                   const std::string& out_csv);

// One training run executed from a fully resolved configuration; exposed so
// tests can drive the exact preset machinery in-process.
struct RunResult {
  std::string run_dir;
  dynamics::Mode mode;
  std::uint64_t seed = 0;
  double trace_scale = 1.0;
  dynamics::Trajectory trajectory;
};

RunResult execute_run(const ExperimentConfig& config, dynamics::Mode mode, std::uint64_t seed,
                      double trace_scale, const std::string& out_dir, bool write_outputs);

std::string csv_header();

}  // namespace sgld::cli
