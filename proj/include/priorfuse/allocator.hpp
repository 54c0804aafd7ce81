#pragma once

// Sequential one-step-look-ahead allocation: per-prompt stopping decisions
// driven by the current empirical prior-bias estimate.

#include <cstddef>
#include <limits>

#include "priorfuse/estimator.hpp"

namespace priorfuse {

/// Passing this as budget_cap turns the hard ceiling off.
inline constexpr std::size_t kNoBudgetCap = std::numeric_limits<std::size_t>::max();

struct AllocatorConfig {
  double c = 0.0039;
  std::size_t k_min = 4;
  std::size_t k_init = 4;
  std::size_t increment = 2;
  std::size_t budget_cap = 16;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

enum class Action { Stop, RolloutMore };

struct AllocationDecision {
  Action action = Action::Stop;
  std::size_t n = 0;  // rollouts requested; 0 for Stop
  double k_target = 0.0;
  double delta2_hat = 0.0;
};

/// delta2 / (k delta2 + 1).
double empirical_mse(std::size_t k, double delta2_hat);

/// empirical_mse(k) + c k.
double risk(std::size_t k, double delta2_hat, double c);

/// delta2^2 / ((k + 1) delta2 + 1)^2, a strict lower bound on the one-step
/// drop of empirical_mse whenever delta2 > 0.
double marginal_return_lower_bound(std::size_t k, double delta2_hat);

/// 1/sqrt(c) - 1/delta2. Returns -infinity when delta2 == 0, which every k
/// satisfies.
double target_budget(double delta2_hat, double c);

/// (k >= k_min and k >= target) or k >= budget_cap. Ties stop.
bool should_stop(std::size_t k, double delta2_hat, const AllocatorConfig& config);

/// Re-estimates delta2 from the group's current mean and applies should_stop.
AllocationDecision decide(const RolloutGroup& group, const PriorEstimate& prior,
                          const AllocatorConfig& config);

/// Same decision from sufficient statistics (k rollouts, `successes` of them +1).
AllocationDecision decide(std::size_t k, std::size_t successes, double prior_value,
                          const AllocatorConfig& config);

}  // namespace priorfuse
