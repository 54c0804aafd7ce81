// Command-line entry point for experiment runs.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "priorfuse/experiment.hpp"

namespace {
constexpr int kExitConfigError = 2;
}

int main(int argc, char** argv) {
  CLI::App app{"Prior-fused baseline estimation and adaptive rollout allocation experiments"};
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string mode;
  std::size_t jobs = 0;
  app.add_option("--config", config_path, "YAML or JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "RNG seed; overrides the config");
  app.add_option("--out", out_dir, "Output directory; overrides the config");
  app.add_option("--mode", mode, "Run mode; overrides the config")
      ->check(CLI::IsMember({"verify", "allocate", "train", "sweep"}));
  app.add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfigError;
  }

  try {
    priorfuse::ExperimentConfig config =
        config_path.empty() ? priorfuse::ExperimentConfig{} : priorfuse::load_config(config_path);
    if (seed) config.seed = seed;
    if (!out_dir.empty()) config.output = out_dir;
    if (!mode.empty()) config.mode = priorfuse::parse_mode(mode);
    if (jobs > 0) config.jobs = jobs;

    const auto outcome = priorfuse::run_experiment(config);
    std::cout << priorfuse::render_table(outcome.checks);
    std::cout << fmt::format("wrote {} files to {}\n", outcome.files.size(), config.output.string());
    return outcome.exit_code();
  } catch (const priorfuse::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
