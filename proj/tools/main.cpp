#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "sgld/presets.hpp"

namespace {

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<std::uint64_t> seeds;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    const std::size_t comma = csv.find(',', pos);
    const std::string token = csv.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (!token.empty()) seeds.push_back(std::stoull(token));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sgldlab: anisotropic-noise SGLD experiments"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "run an experiment preset");
  std::string preset;
  std::string config_path;
  std::string seeds_csv;
  std::uint64_t single_seed = 0;
  bool seed_given = false;
  double trace_scale = 0.0;
  bool scale_given = false;
  std::string dataset;
  int log_every = 0;
  std::string out_dir = "runs";
  int workers = 2;
  run->add_option("--preset", preset, "preset name")->required();
  run->add_option("--config", config_path, "JSON config overriding the preset defaults");
  run->add_option("--seeds", seeds_csv, "comma-separated seed list");
  run->add_option("--seed", single_seed, "single seed")->each([&](const std::string&) { seed_given = true; });
  run->add_option("--trace-scale", trace_scale, "multiplier on the trace budget")
      ->each([&](const std::string&) { scale_given = true; });
  run->add_option("--dataset", dataset, "synthetic | idx:DIR");
  run->add_option("--log-every", log_every, "logging cadence in steps");
  run->add_option("--out-dir", out_dir, "output directory");
  run->add_option("--workers", workers, "parallel runs");

  // validate
  auto* validate = app.add_subcommand("validate", "check a config file without running");
  std::string validate_path;
  validate->add_option("--config", validate_path, "JSON config to check")->required();

  // summarize
  auto* summarize_cmd = app.add_subcommand("summarize", "aggregate finished runs");
  std::vector<std::string> run_dirs;
  std::string summary_out;
  summarize_cmd->add_option("dirs", run_dirs, "run directories")->required();
  summarize_cmd->add_option("--out", summary_out, "summary CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      sgld::cli::PresetOptions options;
      if (!config_path.empty()) options.config_path = config_path;
      if (!seeds_csv.empty())
        options.seeds = parse_seed_list(seeds_csv);
      else if (seed_given)
        options.seeds = std::vector<std::uint64_t>{single_seed};
      if (scale_given) options.trace_scale = trace_scale;
      if (!dataset.empty()) options.dataset = dataset;
      if (log_every > 0) options.log_every = log_every;
      options.out_dir = out_dir;
      options.workers = workers;
      return sgld::cli::run_preset(preset, options);
    }
    if (validate->parsed()) {
      const auto report = sgld::cli::validate_config(validate_path);
      if (report.ok()) {
        std::cout << "config ok\n";
        return 0;
      }
      for (const auto& violation : report.violations) std::cout << "violation: " << violation << "\n";
      return 1;
    }
    if (summarize_cmd->parsed()) {
      const auto summaries = sgld::cli::summarize(run_dirs, summary_out);
      std::printf("%-20s %8s %5s %14s %14s %14s\n", "mode", "scale", "runs", "gen_err", "train_loss",
                  "bound");
      for (const auto& s : summaries)
        std::printf("%-20s %8g %5d %7.4f±%.4f %7.4f±%.4f %7.4f±%.4f\n", s.mode.c_str(), s.trace_scale,
                    s.runs, s.gen_err_mean, s.gen_err_std_error, s.train_loss_mean,
                    s.train_loss_std_error, s.bound_mean, s.bound_std_error);
      return 0;
    }
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 2;
}
