#include "priorfuse/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace priorfuse {

namespace {

void require_unit_range(double x, const char* what) {
  if (!(x >= -1.0 - kLatticeTol && x <= 1.0 + kLatticeTol)) {
    throw std::invalid_argument(std::string(what) + " must lie in [-1, 1], got " +
                                std::to_string(x));
  }
}

}  // namespace

Reward::Reward(int value) : value_(value) {
  if (value != 1 && value != -1) {
    throw std::invalid_argument("reward must be -1 or +1, got " + std::to_string(value));
  }
}

RolloutGroup::RolloutGroup(PromptId prompt_id, std::vector<Reward> rewards)
    : prompt_id_(prompt_id), rewards_(std::move(rewards)) {
  successes_ = static_cast<std::size_t>(
      std::count_if(rewards_.begin(), rewards_.end(), [](Reward r) { return r.is_success(); }));
}

void RolloutGroup::append(Reward r) {
  rewards_.push_back(r);
  if (r.is_success()) ++successes_;
}

void RolloutGroup::append(std::span<const Reward> rs) {
  for (Reward r : rs) append(r);
}

PriorEstimate PriorEstimate::from_probability(double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument("prior probability must lie in [0, 1], got " + std::to_string(p));
  }
  return PriorEstimate{p, 2.0 * p - 1.0};
}

PriorEstimate PriorEstimate::from_value(double value) {
  require_unit_range(value, "prior value");
  value = std::clamp(value, -1.0, 1.0);
  return PriorEstimate{(value + 1.0) / 2.0, value};
}

double empirical_mean(std::span<const Reward> rewards) {
  if (rewards.empty()) throw std::invalid_argument("no observations");
  long sum = 0;
  for (Reward r : rewards) sum += r.value();
  return static_cast<double>(sum) / static_cast<double>(rewards.size());
}

double empirical_mean(const RolloutGroup& group) {
  if (group.k() == 0) throw std::invalid_argument("no observations");
  // 2s/k - 1 computed as (2s - k)/k keeps lattice points exact.
  const auto k = static_cast<double>(group.k());
  const auto s = static_cast<double>(group.successes());
  return (2.0 * s - k) / k;
}

double noise_variance_bound(std::size_t k) {
  if (k == 0) throw std::invalid_argument("noise_variance_bound: k must be >= 1");
  return 1.0 / static_cast<double>(k);
}

double empirical_bias(double v_bar, double prior_value, std::size_t k) {
  require_unit_range(v_bar, "v_bar");
  require_unit_range(prior_value, "prior value");
  const double gap = v_bar - prior_value;
  return std::max(0.0, gap * gap - noise_variance_bound(k));
}

double shrinkage_weight(double delta2_hat, double sigma2_hat) {
  if (!(sigma2_hat > 0.0)) {
    throw std::invalid_argument("shrinkage_weight: sigma2_hat must be > 0");
  }
  if (delta2_hat < 0.0) throw std::invalid_argument("shrinkage_weight: delta2_hat must be >= 0");
  if (std::isinf(delta2_hat)) return 1.0;
  return delta2_hat / (delta2_hat + sigma2_hat);
}

double fuse_baseline(double v_bar, double prior_value, double w_hat) {
  return w_hat * v_bar + (1.0 - w_hat) * prior_value;
}

double fused_std(double mu_star, double floor) {
  const double var = 1.0 - mu_star * mu_star;
  return std::sqrt(std::max(floor * floor, var));
}

FusionResult fuse(double v_bar, std::size_t k, double prior_value) {
  FusionResult out;
  out.sigma2_hat = noise_variance_bound(k);
  out.delta2_hat = empirical_bias(v_bar, prior_value, k);
  out.w_hat = shrinkage_weight(out.delta2_hat, out.sigma2_hat);
  out.mu_star = fuse_baseline(v_bar, prior_value, out.w_hat);
  out.sigma_star = fused_std(out.mu_star);
  return out;
}

FusionResult fuse(const RolloutGroup& group, const PriorEstimate& prior) {
  return fuse(empirical_mean(group), group.k(), prior.value);
}

std::vector<double> advantages(std::span<const Reward> rewards, const FusionResult& fusion) {
  std::vector<double> out;
  out.reserve(rewards.size());
  for (Reward r : rewards) {
    out.push_back((static_cast<double>(r.value()) - fusion.mu_star) / fusion.sigma_star);
  }
  return out;
}

std::vector<double> advantages(const RolloutGroup& group, const FusionResult& fusion) {
  return advantages(group.rewards(), fusion);
}

double theoretical_mse(double w, double sigma2, double delta2) {
  return w * w * sigma2 + (1.0 - w) * (1.0 - w) * delta2;
}

double optimal_weight(double sigma2, double delta2) {
  if (sigma2 < 0.0 || delta2 < 0.0) {
    throw std::invalid_argument("optimal_weight: variances must be >= 0");
  }
  if (sigma2 + delta2 <= 0.0) throw std::invalid_argument("degenerate");
  return delta2 / (delta2 + sigma2);
}

double group_sample_std(std::span<const Reward> rewards) {
  const double m = empirical_mean(rewards);
  return std::sqrt(std::max(0.0, 1.0 - m * m));
}

}  // namespace priorfuse
