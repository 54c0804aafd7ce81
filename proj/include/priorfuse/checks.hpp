#pragma once

// Acceptance-level checks. Each returns a pass flag, a one-line detail and the
// underlying reports; budgets are configurable so the CLI can run reduced
// grids while the acceptance suite runs the full ones.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "priorfuse/verifier.hpp"

namespace priorfuse {

struct CheckResult {
  CheckResult() = default;
  CheckResult(std::string id_, std::string name_) : id(std::move(id_)), name(std::move(name_)) {}

  std::string id;    // "C1".."C12" or a named property
  std::string name;
  bool pass = false;
  std::string detail;
  std::vector<MCReport> reports;
  nlohmann::ordered_json data = nlohmann::ordered_json::object();

  nlohmann::ordered_json to_json() const;
};

struct CheckBudget {
  std::size_t mse_configs = 50;
  std::uint64_t mse_trials = 1000000;
  std::size_t weight_draws = 1000;
  std::size_t exact_batches = 20;
  std::size_t random_batches = 200;
  std::vector<double> regret_costs{0.02, 0.01, 0.0039, 0.002, 0.001};
  std::uint64_t regret_episodes = 100000;
  std::uint64_t gradient_trials = 200000;
  std::uint64_t false_rejection_trials = 200000;
  std::size_t training_seeds = 20;
  std::size_t training_steps = 200;
  std::size_t fd_states = 100;
};

/// Fixed-weight MSE decomposition: sampled vs closed form on random configs.
CheckResult check_mse_decomposition(const CheckBudget& budget, std::uint64_t seed, std::size_t jobs = 1);

/// optimal_weight is no worse than every w on a 0.01 grid.
CheckResult check_optimal_weight(const CheckBudget& budget, std::uint64_t seed);

/// Exact |Bias(mu*)| <= 1/sqrt(k) over the full grid.
CheckResult check_bias_bound();

/// Log-log slope of exact |Bias| for p = 0.9, V = 0 over k = 16..256.
CheckResult check_bias_decay();

/// marginal_return_lower_bound is strictly below the exact one-step drop.
CheckResult check_marginal_return();

/// Default cost constants, Exact-prior batches and realized budgets.
CheckResult check_stopping_constants(const CheckBudget& budget, std::uint64_t seed);

/// Robustness table for k in [1, 64] and the V = 0.8 worked examples.
CheckResult check_group_size_examples();

/// Regret(c)/c over the cost grid for four hallucination scenarios.
CheckResult check_regret(const CheckBudget& budget, std::uint64_t seed, std::size_t jobs = 1);

/// Gradient variance bound for all four baselines on a five-prompt policy.
CheckResult check_gradient_variance(const CheckBudget& budget, std::uint64_t seed, std::size_t jobs = 1);

/// Exact vs sampled false-rejection rate at k = 4 with an Exact prior.
CheckResult check_false_rejection(const CheckBudget& budget, std::uint64_t seed);

/// Multi-seed GRPO (G = 16) vs V05 (k_init = 4) at compute parity.
CheckResult check_training_claims(const CheckBudget& budget, std::uint64_t seed, std::size_t jobs = 1);

/// surrogate_gradient vs central differences on random states.
CheckResult check_surrogate_gradient(const CheckBudget& budget, std::uint64_t seed);

/// The four regret scenarios used by check_regret.
std::vector<RegretScenario> default_regret_scenarios();

}  // namespace priorfuse
