#pragma once

// Config-driven experiment runs: parsing, validation, execution and artifact
// writing for the verify, allocate, train and sweep modes.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "priorfuse/checks.hpp"
#include "priorfuse/scheduler.hpp"
#include "priorfuse/trainer.hpp"

namespace priorfuse {

/// Invalid or incomplete configuration. The message names the offending field.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Mode { Verify, Allocate, Train, Sweep };
std::string to_string(Mode m);
Mode parse_mode(std::string_view s);  // throws ConfigError

/// A group of prompts sharing a prior scenario.
struct ScenarioSpec {
  std::vector<double> p_values;
  PriorScenario prior = scenario::Exact{};
};

struct ExperimentConfig {
  Mode mode = Mode::Verify;
  std::optional<std::uint64_t> seed;
  std::filesystem::path output = "results";
  std::size_t jobs = 1;
  SchedulerConfig scheduler;

  // allocate
  std::vector<ScenarioSpec> scenarios;
  std::size_t batches = 1;

  // verify
  CheckBudget budget;
  std::vector<std::string> checks;  // empty selects every verify check

  // train / sweep
  TrainerConfig trainer;  // method, batch_size and seed are set per run
  std::vector<std::string> methods{"grpo", "v05"};
  std::size_t rollouts_per_step = 256;
  std::size_t grpo_group_size = 16;
  std::size_t fixed_group_size = 4;
  std::size_t seeds = 20;

  /// Throws ConfigError naming the offending field.
  void validate() const;

  /// Trainer config for one method at compute parity.
  TrainerConfig trainer_for(std::string_view method) const;
};

/// Parses YAML, or JSON as a subset of it. Unknown keys are errors.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Check ids run by verify mode, in order.
const std::vector<std::string>& verify_check_ids();

struct RunOutcome {
  std::vector<CheckResult> checks;
  std::vector<std::filesystem::path> files;  // relative to the output directory

  bool all_pass() const;
  int exit_code() const { return all_pass() ? 0 : 1; }
};

/// Runs the configured mode and writes artifacts into config.output. Files are
/// staged and only moved into place once the run completes; on an exception
/// the staging area is removed and nothing is left behind.
RunOutcome run_experiment(const ExperimentConfig& config);

/// Plain-text pass/fail table, one line per check.
std::string render_table(const std::vector<CheckResult>& checks);

/// Runs the same config twice into scratch directories and compares every
/// output byte for byte, skipping the timestamp line of summary.txt.
CheckResult check_determinism(ExperimentConfig config, const std::filesystem::path& scratch);

}  // namespace priorfuse
