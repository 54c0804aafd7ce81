#pragma once

// Independent numerical checks of the estimator and allocator: exact binomial
// enumeration where the outcome space is small, Monte Carlo otherwise.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "priorfuse/allocator.hpp"
#include "priorfuse/policy.hpp"
#include "priorfuse/simulator.hpp"

namespace priorfuse {

/// Tolerance band for sampled checks, in standard errors.
inline constexpr double kSigmaBand = 3.0;

struct MCReport {
  std::string quantity;
  double estimate = 0.0;
  double std_error = 0.0;  // 0 when exact
  std::uint64_t trials = 0;
  bool exact = false;
  double bound = 0.0;
  bool pass = false;

  nlohmann::ordered_json to_json() const;
};

/// Streaming mean and second central moment; mergeable across workers.
class RunningStats {
 public:
  void add(double x);
  void merge(const RunningStats& other);

  std::uint64_t count() const { return n_; }
  double mean() const { return mean_; }
  /// Unbiased sample variance; 0 with fewer than two samples.
  double variance() const;
  double std_error() const;

 private:
  std::uint64_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

// ---- exact enumeration --------------------------------------------------

/// Binomial(k, p) pmf at x, computed in log space; p in {0, 1} handled exactly.
double binomial_pmf(std::size_t k, std::size_t x, double p);

struct EstimatorMoments {
  double mean = 0.0;  // E[mu*]
  double bias = 0.0;  // E[mu*] - mu_true
  double mse = 0.0;   // E[(mu* - mu_true)^2]
};

/// Exact moments of the fused baseline over the k + 1 success counts.
/// Requires 1 <= k <= 10^4.
EstimatorMoments enumerate_estimator_moments(double p_true, double prior_value, std::size_t k);

/// Exact P(delta2_hat > 0) at group size k when the prior equals mu_true.
double false_rejection_exact(double p_true, std::size_t k);

/// Sampled counterpart of false_rejection_exact. The report passes when the
/// two agree within kSigmaBand standard errors.
MCReport false_rejection_mc(double p_true, std::size_t k, std::uint64_t trials, std::uint64_t seed);

// ---- Monte Carlo of the fixed-weight estimator --------------------------

/// w^2 * 4p(1-p)/k + (1-w)^2 * (V - mu_true)^2.
double fixed_weight_mse_theory(double p_true, double prior_value, std::size_t k, double w);

/// Sampled MSE of w * v_bar + (1 - w) * V. `bound` holds the closed form; pass
/// iff they agree within kSigmaBand standard errors (exactly when the sampled
/// variance is zero). Requires trials >= 10^5.
MCReport mc_fixed_weight_mse(double p_true, double prior_value, std::size_t k, double w,
                             std::uint64_t trials, std::uint64_t seed);

// ---- stopping oracle and regret -----------------------------------------

/// Delta^2 / (k Delta^2 + 1) + c k with the true bias.
double true_risk(double k, double delta2_true, double c);

struct OracleStop {
  double x_star = 0.0;  // 1/sqrt(c) - 1/Delta^2 (-inf when Delta^2 == 0)
  std::size_t k_oracle = 0;
  double risk = 0.0;  // true_risk(k_oracle)
};

/// Brute-force integer minimizer of true_risk over [k_min, max(k_min, ceil(10/sqrt(c)))].
OracleStop oracle_stop(double delta2_true, double c, std::size_t k_min);

/// One allocator episode on a single prompt: k_init rollouts, then decide /
/// draw until Stop. Reward j is stream.uniform(j) < p_true. Returns K*.
std::size_t run_allocator_episode(double p_true, double prior_value, const AllocatorConfig& config,
                                  const CounterStream& stream);

struct RegretScenario {
  std::string label;
  double p_true = 0.5;
  PriorScenario prior;  // must be deterministic
};

struct RegretPolicy {
  std::size_t k_min = 4;
  std::size_t k_init = 4;
  std::size_t increment = 2;
  /// Cap each episode at round(1/sqrt(c)) (at least k_init); false disables it.
  bool cap_at_inverse_sqrt_c = true;

  AllocatorConfig allocator_for(double c) const;
};

struct RegretPoint {
  std::string scenario;
  double c = 0.0;
  double delta2 = 0.0;
  OracleStop oracle;
  double mean_risk = 0.0;
  double regret = 0.0;
  double std_error = 0.0;
  double regret_over_c = 0.0;
  std::size_t k_mode = 0;
  double k_mean = 0.0;
  std::uint64_t episodes = 0;

  nlohmann::ordered_json to_json() const;
};

/// Regret(c) = E[true_risk(K*)] - oracle risk for one scenario. Requires
/// episodes >= 10^5 unless `allow_small` is set.
RegretPoint mc_regret(const RegretScenario& scenario, double c, std::uint64_t episodes,
                      std::uint64_t seed, const RegretPolicy& policy = {}, bool allow_small = false);

struct TrendResult {
  double kendall_s = 0.0;
  /// One-sided exact permutation p-value of an upward trend.
  double p_upward = 1.0;
  /// max / min of the ratios; +inf when the minimum is not positive.
  double max_over_min = 0.0;
  /// Fitted constant: the largest observed ratio.
  double fitted_constant = 0.0;
  bool pass = false;
};

/// Tests whether `ratios`, ordered by decreasing cost, stay bounded: pass iff
/// there is no significant upward trend (p > 0.05) or max/min < 3. Exact
/// enumeration of permutations; at most 9 points.
TrendResult regret_trend(std::span<const double> ratios);

// ---- base group size ----------------------------------------------------

struct GroupSizeRow {
  std::size_t k = 0;
  double gap = 0.0;        // 2 / k
  double threshold = 0.0;  // 1 / sqrt(k)
  bool robust = false;     // threshold >= gap
};

/// One row per k in [k_lo, k_hi], both within [1, 64].
std::vector<GroupSizeRow> check_base_group_size(std::size_t k_lo, std::size_t k_hi);

// ---- gradient variance bound --------------------------------------------

enum class BaselineKind { Oracle, EmpiricalMean, Fused, PriorOnly };
std::string to_string(BaselineKind b);

enum class CheckStatus { Pass, Fail, Inconclusive };
std::string to_string(CheckStatus s);

struct GradientBoundReport {
  std::size_t prompt = 0;
  double theta = 0.0;
  BaselineKind baseline = BaselineKind::Oracle;
  double var_trace = 0.0;
  double var_trace_se = 0.0;
  double var_oracle = 0.0;
  double phi_score = 0.0;
  double mse_b = 0.0;
  double bias_b = 0.0;
  double L_hat = 0.0;
  double bound_value = 0.0;
  double bound_se = 0.0;
  double slack = 0.0;  // bound_value - var_trace
  std::uint64_t trials = 0;
  CheckStatus status = CheckStatus::Inconclusive;

  nlohmann::ordered_json to_json() const;
};

struct GradientCheckConfig {
  BaselineKind baseline = BaselineKind::Fused;
  PriorScenario prior = scenario::Exact{};
  std::size_t group_size = 4;  // rollouts behind the empirical and fused baselines
  std::uint64_t trials = 200000;
  std::uint64_t seed = 0;
};

/// Per-prompt check of Tr Var(g) <= Var_oracle + Phi * MSE(b) + L |Bias(b)| on
/// the single-sample estimator g = s(o) (r(o) - b), where b is computed from
/// rollouts independent of o. The reward of a prompt is +1 exactly when the
/// policy answers correctly, so mu_true = 2 theta - 1. Every term is sampled;
/// scores are closed form.
std::vector<GradientBoundReport> check_gradient_bound(const PolicyState& policy,
                                                      std::span<const std::size_t> prompts,
                                                      const GradientCheckConfig& config);

}  // namespace priorfuse
