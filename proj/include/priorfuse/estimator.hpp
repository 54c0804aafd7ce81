#pragma once

// Empirical shrinkage fusion of a prior value prediction with the mean of a
// small group of binary rollouts, plus the standardized advantages built on it.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace priorfuse {

using PromptId = std::uint64_t;

/// Lower bound applied to the fused standard deviation so that advantages stay
/// finite when the fused baseline reaches +/-1.
inline constexpr double kStdFloor = 1e-6;

/// Tolerance used when checking that a mean sits on the 2/k lattice or inside
/// [-1, 1].
inline constexpr double kLatticeTol = 1e-12;

/// Normalized binary reward. Only -1 and +1 are representable.
class Reward {
 public:
  explicit Reward(int value);

  static Reward success() { return Reward(1); }
  static Reward failure() { return Reward(-1); }

  int value() const { return value_; }
  bool is_success() const { return value_ > 0; }

  friend bool operator==(Reward, Reward) = default;

 private:
  int value_;
};

/// A prompt's accumulated rewards. Rewards are append-only.
class RolloutGroup {
 public:
  RolloutGroup() = default;
  explicit RolloutGroup(PromptId prompt_id) : prompt_id_(prompt_id) {}
  RolloutGroup(PromptId prompt_id, std::vector<Reward> rewards);

  PromptId prompt_id() const { return prompt_id_; }
  std::size_t k() const { return rewards_.size(); }
  std::size_t successes() const { return successes_; }
  std::span<const Reward> rewards() const { return rewards_; }

  void append(Reward r);
  void append(std::span<const Reward> rs);

 private:
  PromptId prompt_id_ = 0;
  std::vector<Reward> rewards_;
  std::size_t successes_ = 0;
};

/// Prior prediction in both probability and reward scale; value == 2p - 1.
struct PriorEstimate {
  double p = 0.5;
  double value = 0.0;

  static PriorEstimate from_probability(double p);
  static PriorEstimate from_value(double value);
};

struct FusionResult {
  double sigma2_hat = 0.0;
  double delta2_hat = 0.0;
  double w_hat = 0.0;
  double mu_star = 0.0;
  double sigma_star = 1.0;
};

/// Mean of the rewards. Throws std::invalid_argument("no observations") when
/// the group is empty.
double empirical_mean(const RolloutGroup& group);
double empirical_mean(std::span<const Reward> rewards);

/// Maximum-entropy bound on Var(mean of k rewards): exactly 1/k.
double noise_variance_bound(std::size_t k);

/// Positive-part estimate max(0, (v_bar - V)^2 - 1/k). Zero exactly on the
/// acceptance region of the prior.
double empirical_bias(double v_bar, double prior_value, std::size_t k);

double shrinkage_weight(double delta2_hat, double sigma2_hat);

double fuse_baseline(double v_bar, double prior_value, double w_hat);

/// sqrt(1 - mu^2), floored at `floor`.
double fused_std(double mu_star, double floor = kStdFloor);

/// Full fusion pipeline for a group mean observed over k rollouts.
FusionResult fuse(double v_bar, std::size_t k, double prior_value);
FusionResult fuse(const RolloutGroup& group, const PriorEstimate& prior);

/// A_i = (r_i - mu_star) / sigma_star, in reward order.
std::vector<double> advantages(const RolloutGroup& group, const FusionResult& fusion);
std::vector<double> advantages(std::span<const Reward> rewards, const FusionResult& fusion);

/// w^2 sigma2 + (1 - w)^2 delta2.
double theoretical_mse(double w, double sigma2, double delta2);

/// delta2 / (delta2 + sigma2). Throws when both are zero.
double optimal_weight(double sigma2, double delta2);

/// Population standard deviation of the rewards. Diagnostic only; the
/// advantages above standardize by the fused std instead.
double group_sample_std(std::span<const Reward> rewards);

}  // namespace priorfuse
