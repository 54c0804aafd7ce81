#pragma once

// Desk-scale policy-gradient loop on a bank of Bernoulli prompts, comparing
// group-normalized advantages against fused-baseline advantages.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "priorfuse/policy.hpp"
#include "priorfuse/scheduler.hpp"
#include "priorfuse/simulator.hpp"

namespace priorfuse {

/// One prompt's sampled responses with their advantages.
struct GroupSample {
  std::size_t prompt = 0;
  std::vector<Reward> rewards;
  std::vector<double> advantages;
};

/// Clipped surrogate averaged per group, then over groups.
double surrogate_objective(const PolicyState& state, std::span<const GroupSample> groups, double clip_eps);

/// Gradient of surrogate_objective with respect to the logits. A sample whose
/// clipped branch is strictly active (A > 0 and rho > 1 + eps, or A < 0 and
/// rho < 1 - eps) contributes nothing.
std::vector<double> surrogate_gradient(const PolicyState& state, std::span<const GroupSample> groups,
                                       double clip_eps);

/// Group-normalized advantages (r - mean) / (std + floor), with std the
/// intrinsic binary std sqrt(1 - mean^2). All zeros when every reward agrees.
std::vector<double> group_normalized_advantages(std::span<const Reward> rewards);

namespace method {
struct Grpo {
  std::size_t group_size = 16;
};
/// Scheduler-driven fused baseline with adaptive group sizes.
struct V05 {
  SchedulerConfig scheduler;
};
/// Fixed group, baseline mu_true.
struct Oracle {
  std::size_t group_size = 4;
};
/// Fixed group, baseline equal to the prior value.
struct PriorOnly {
  std::size_t group_size = 4;
};
}  // namespace method

using BaselineMethod = std::variant<method::Grpo, method::V05, method::Oracle, method::PriorOnly>;

std::string method_name(const BaselineMethod& m);

/// Rollouts per prompt a method plans for: G, k_init, or the fixed group size.
std::size_t nominal_group_size(const BaselineMethod& m);

struct TrainerConfig {
  BaselineMethod method = method::Grpo{};
  double learning_rate = 4.0;
  double clip_eps = 0.2;
  std::size_t steps = 200;
  std::size_t batch_size = 16;
  std::size_t num_prompts = 256;
  /// Initial success probabilities are spaced evenly over [p_low, p_high].
  double p_low = 0.05;
  double p_high = 0.95;
  PriorScenario prior = scenario::Exact{};
  /// Penalty on KL(pi || pi_initial); off by default.
  double kl_coef = 0.0;
  double divergence_limit = 50.0;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  std::size_t nominal_rollouts() const { return batch_size * nominal_group_size(method); }
};

struct StepRecord {
  std::size_t step = 0;
  double grad_norm = 0.0;
  /// ||g - g_ideal||^2, where g_ideal is the exact full-bank gradient of the
  /// expected reward under standardized advantages.
  double grad_var = 0.0;
  /// Mean binary entropy over the whole prompt bank after the update.
  double entropy = 0.0;
  double mean_reward = 0.0;
  std::size_t rollouts_used = 0;
};

struct TrainingTrace {
  std::string method;
  std::uint64_t seed = 0;
  std::vector<StepRecord> steps;
  bool diverged = false;

  std::string to_csv() const;
};

/// Runs the loop. Rewards come from a SimulatedEnv and priors from a
/// ScenarioPrior, both keyed by (seed, step). Deterministic under the seed.
TrainingTrace train(const TrainerConfig& config);

/// Exponential moving average with the first value as the starting point.
std::vector<double> ema(std::span<const double> xs, double beta = 0.9);

struct Comparison {
  std::string baseline_name;
  std::string candidate_name;
  std::size_t seeds = 0;
  std::size_t steps = 0;
  /// Seed-averaged EMA(0.9) gradient variance and raw entropy per step.
  std::vector<double> baseline_grad_var;
  std::vector<double> candidate_grad_var;
  std::vector<double> baseline_entropy;
  std::vector<double> candidate_entropy;
  double fraction_candidate_lower_var = 0.0;
  double final_entropy_baseline = 0.0;
  double final_entropy_candidate = 0.0;
  bool any_diverged = false;
  bool variance_claim = false;  // candidate lower at >= 80% of steps
  bool entropy_claim = false;   // candidate final entropy strictly higher

  std::string to_csv() const;
};

/// Averages per-seed traces of two methods over the shortest common length.
/// Pair with require_compute_parity on the generating configs.
Comparison compare(const std::vector<TrainingTrace>& baseline, const std::vector<TrainingTrace>& candidate);

/// Seeds used for a multi-seed run: base_seed, base_seed + 1, ...
std::vector<TrainingTrace> train_seeds(TrainerConfig config, std::size_t seeds, std::size_t jobs = 1);

/// Checks compute parity between two configs; throws std::invalid_argument when
/// they differ.
void require_compute_parity(const TrainerConfig& a, const TrainerConfig& b);

}  // namespace priorfuse
