#include "priorfuse/allocator.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace priorfuse {

void AllocatorConfig::validate() const {
  if (!(c > 0.0) || !std::isfinite(c)) {
    throw std::invalid_argument("allocator.c must be a finite value > 0");
  }
  if (k_min < 4) throw std::invalid_argument("allocator.k_min must be >= 4");
  if (k_init < k_min) throw std::invalid_argument("allocator.k_init must be >= allocator.k_min");
  if (increment < 1) throw std::invalid_argument("allocator.increment must be >= 1");
  if (budget_cap < k_init) {
    throw std::invalid_argument("allocator.budget_cap must be >= allocator.k_init");
  }
}

double empirical_mse(std::size_t k, double delta2_hat) {
  if (k == 0) throw std::invalid_argument("empirical_mse: k must be >= 1");
  if (delta2_hat == 0.0) return 0.0;
  return delta2_hat / (static_cast<double>(k) * delta2_hat + 1.0);
}

double risk(std::size_t k, double delta2_hat, double c) {
  return empirical_mse(k, delta2_hat) + c * static_cast<double>(k);
}

double marginal_return_lower_bound(std::size_t k, double delta2_hat) {
  const double denom = (static_cast<double>(k) + 1.0) * delta2_hat + 1.0;
  return delta2_hat * delta2_hat / (denom * denom);
}

double target_budget(double delta2_hat, double c) {
  if (!(c > 0.0)) throw std::invalid_argument("target_budget: c must be > 0");
  if (delta2_hat <= 0.0) return -std::numeric_limits<double>::infinity();
  return 1.0 / std::sqrt(c) - 1.0 / delta2_hat;
}

bool should_stop(std::size_t k, double delta2_hat, const AllocatorConfig& config) {
  if (k >= config.budget_cap) return true;
  if (k < config.k_min) return false;
  return static_cast<double>(k) >= target_budget(delta2_hat, config.c);
}

AllocationDecision decide(std::size_t k, std::size_t successes, double prior_value,
                          const AllocatorConfig& config) {
  if (k < config.k_init) {
    throw std::invalid_argument("decide: group has " + std::to_string(k) +
                                " rollouts, fewer than k_init=" + std::to_string(config.k_init));
  }
  const double v_bar = (2.0 * static_cast<double>(successes) - static_cast<double>(k)) /
                       static_cast<double>(k);
  AllocationDecision d;
  d.delta2_hat = empirical_bias(v_bar, prior_value, k);
  d.k_target = target_budget(d.delta2_hat, config.c);
  if (should_stop(k, d.delta2_hat, config)) {
    d.action = Action::Stop;
    d.n = 0;
  } else {
    d.action = Action::RolloutMore;
    d.n = config.increment;
  }
  return d;
}

AllocationDecision decide(const RolloutGroup& group, const PriorEstimate& prior,
                          const AllocatorConfig& config) {
  return decide(group.k(), group.successes(), prior.value, config);
}

}  // namespace priorfuse
