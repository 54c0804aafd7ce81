#include "priorfuse/verifier.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

#include "priorfuse/estimator.hpp"

namespace priorfuse {

namespace {

constexpr std::uint64_t kRegretTag = 0x726567726574ULL;  // "regret"
constexpr std::uint64_t kGradientTag = 0x67726164ULL;    // "grad"

std::uint64_t bits(double x) { return std::bit_cast<std::uint64_t>(x); }

bool within_band(double estimate, double target, double se) {
  if (se == 0.0) return std::abs(estimate - target) <= 1e-12;
  return std::abs(estimate - target) <= kSigmaBand * se;
}

/// Sample variance of `xs` with the standard error of that variance from the
/// fourth central moment.
std::pair<double, double> variance_with_se(const std::vector<double>& xs) {
  const auto n = static_cast<double>(xs.size());
  if (xs.size() < 2) return {0.0, 0.0};
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double m2 = 0.0;
  double m4 = 0.0;
  for (double x : xs) {
    const double d2 = (x - mean) * (x - mean);
    m2 += d2;
    m4 += d2 * d2;
  }
  const double var = m2 / (n - 1.0);
  const double pop_var = m2 / n;
  m4 /= n;
  const double se = std::sqrt(std::max(0.0, m4 - pop_var * pop_var) / n);
  return {var, se};
}

double deterministic_prior(const PromptSpec& spec, const PriorScenario& s) {
  if (std::holds_alternative<scenario::NoisyUnbiased>(s)) {
    throw std::invalid_argument("regret scenarios require a deterministic prior");
  }
  Engine unused(0);
  return prior_predict(spec, s, unused).value;
}

}  // namespace

nlohmann::ordered_json MCReport::to_json() const {
  nlohmann::ordered_json j;
  j["quantity"] = quantity;
  j["estimate"] = estimate;
  j["std_error"] = std_error;
  j["trials"] = trials;
  j["exact"] = exact;
  j["bound"] = bound;
  j["pass"] = pass;
  return j;
}

void RunningStats::add(double x) {
  ++n_;
  const double d = x - mean_;
  mean_ += d / static_cast<double>(n_);
  m2_ += d * (x - mean_);
}

void RunningStats::merge(const RunningStats& o) {
  if (o.n_ == 0) return;
  if (n_ == 0) {
    *this = o;
    return;
  }
  const auto na = static_cast<double>(n_);
  const auto nb = static_cast<double>(o.n_);
  const double d = o.mean_ - mean_;
  const double n = na + nb;
  mean_ += d * nb / n;
  m2_ += o.m2_ + d * d * na * nb / n;
  n_ += o.n_;
}

double RunningStats::variance() const {
  return n_ < 2 ? 0.0 : m2_ / static_cast<double>(n_ - 1);
}

double RunningStats::std_error() const {
  return n_ < 2 ? 0.0 : std::sqrt(variance() / static_cast<double>(n_));
}

double binomial_pmf(std::size_t k, std::size_t x, double p) {
  if (x > k) return 0.0;
  if (p <= 0.0) return x == 0 ? 1.0 : 0.0;
  if (p >= 1.0) return x == k ? 1.0 : 0.0;
  const auto kd = static_cast<double>(k);
  const auto xd = static_cast<double>(x);
  const double log_choose = std::lgamma(kd + 1.0) - std::lgamma(xd + 1.0) - std::lgamma(kd - xd + 1.0);
  return std::exp(log_choose + xd * std::log(p) + (kd - xd) * std::log1p(-p));
}

EstimatorMoments enumerate_estimator_moments(double p_true, double prior_value, std::size_t k) {
  if (k < 1 || k > 10000) throw std::invalid_argument("enumerate_estimator_moments: k must lie in [1, 10^4]");
  if (!(p_true >= 0.0 && p_true <= 1.0)) {
    throw std::invalid_argument("enumerate_estimator_moments: p_true must lie in [0, 1]");
  }
  const double mu = 2.0 * p_true - 1.0;
  const auto kd = static_cast<double>(k);
  EstimatorMoments m;
  for (std::size_t x = 0; x <= k; ++x) {
    const double pmf = binomial_pmf(k, x, p_true);
    if (pmf == 0.0) continue;
    const double v_bar = (2.0 * static_cast<double>(x) - kd) / kd;
    const double mu_star = fuse(v_bar, k, prior_value).mu_star;
    m.mean += pmf * mu_star;
    m.mse += pmf * (mu_star - mu) * (mu_star - mu);
  }
  m.bias = m.mean - mu;
  return m;
}

double false_rejection_exact(double p_true, std::size_t k) {
  if (k < 1) throw std::invalid_argument("false_rejection_exact: k must be >= 1");
  const double mu = 2.0 * p_true - 1.0;
  const auto kd = static_cast<double>(k);
  double rate = 0.0;
  for (std::size_t x = 0; x <= k; ++x) {
    const double v_bar = (2.0 * static_cast<double>(x) - kd) / kd;
    if ((v_bar - mu) * (v_bar - mu) > 1.0 / kd) rate += binomial_pmf(k, x, p_true);
  }
  return rate;
}

MCReport false_rejection_mc(double p_true, std::size_t k, std::uint64_t trials, std::uint64_t seed) {
  if (trials == 0) throw std::invalid_argument("false_rejection_mc: trials must be >= 1");
  const double mu = 2.0 * p_true - 1.0;
  Engine rng = make_engine({seed, bits(p_true), k});
  std::binomial_distribution<std::size_t> successes(k, p_true);
  const auto kd = static_cast<double>(k);
  std::uint64_t rejected = 0;
  for (std::uint64_t t = 0; t < trials; ++t) {
    const double v_bar = (2.0 * static_cast<double>(successes(rng)) - kd) / kd;
    if (empirical_bias(v_bar, mu, k) > 0.0) ++rejected;
  }
  MCReport r;
  r.quantity = fmt::format("false_rejection(p={}, k={})", p_true, k);
  r.trials = trials;
  r.estimate = static_cast<double>(rejected) / static_cast<double>(trials);
  r.std_error = std::sqrt(r.estimate * (1.0 - r.estimate) / static_cast<double>(trials));
  r.bound = false_rejection_exact(p_true, k);
  r.pass = within_band(r.estimate, r.bound, r.std_error);
  return r;
}

double fixed_weight_mse_theory(double p_true, double prior_value, std::size_t k, double w) {
  const double mu = 2.0 * p_true - 1.0;
  const double noise = 4.0 * p_true * (1.0 - p_true) / static_cast<double>(k);
  const double gap = prior_value - mu;
  return w * w * noise + (1.0 - w) * (1.0 - w) * gap * gap;
}

MCReport mc_fixed_weight_mse(double p_true, double prior_value, std::size_t k, double w,
                             std::uint64_t trials, std::uint64_t seed) {
  if (trials < 100000) throw std::invalid_argument("mc_fixed_weight_mse: trials must be >= 10^5");
  if (k < 1) throw std::invalid_argument("mc_fixed_weight_mse: k must be >= 1");
  const double mu = 2.0 * p_true - 1.0;
  const auto kd = static_cast<double>(k);
  Engine rng = make_engine({seed, bits(p_true), bits(prior_value), k, bits(w)});
  std::binomial_distribution<std::size_t> successes(k, p_true);
  RunningStats err2;
  for (std::uint64_t t = 0; t < trials; ++t) {
    const double v_bar = (2.0 * static_cast<double>(successes(rng)) - kd) / kd;
    const double est = w * v_bar + (1.0 - w) * prior_value;
    err2.add((est - mu) * (est - mu));
  }
  MCReport r;
  r.quantity = fmt::format("fixed_weight_mse(p={}, V={}, k={}, w={})", p_true, prior_value, k, w);
  r.estimate = err2.mean();
  r.std_error = err2.std_error();
  r.trials = trials;
  r.bound = fixed_weight_mse_theory(p_true, prior_value, k, w);
  r.pass = within_band(r.estimate, r.bound, r.std_error);
  return r;
}

double true_risk(double k, double delta2_true, double c) {
  return delta2_true / (k * delta2_true + 1.0) + c * k;
}

OracleStop oracle_stop(double delta2_true, double c, std::size_t k_min) {
  if (!(c > 0.0)) throw std::invalid_argument("oracle_stop: c must be > 0");
  if (delta2_true < 0.0) throw std::invalid_argument("oracle_stop: delta2 must be >= 0");
  OracleStop o;
  o.x_star = delta2_true == 0.0 ? -std::numeric_limits<double>::infinity()
                                : 1.0 / std::sqrt(c) - 1.0 / delta2_true;
  const auto ceiling = std::max<std::size_t>(k_min, static_cast<std::size_t>(std::ceil(10.0 / std::sqrt(c))));
  o.k_oracle = k_min;
  o.risk = true_risk(static_cast<double>(k_min), delta2_true, c);
  for (std::size_t k = k_min + 1; k <= ceiling; ++k) {
    const double r = true_risk(static_cast<double>(k), delta2_true, c);
    if (r < o.risk) {
      o.risk = r;
      o.k_oracle = k;
    }
  }
  return o;
}

std::size_t run_allocator_episode(double p_true, double prior_value, const AllocatorConfig& config,
                                  const CounterStream& stream) {
  std::size_t k = 0;
  std::size_t s = 0;
  auto draw = [&](std::size_t n) {
    for (std::size_t j = 0; j < n; ++j, ++k) {
      if (stream.uniform(k) < p_true) ++s;
    }
  };
  draw(config.k_init);
  for (;;) {
    const auto d = decide(k, s, prior_value, config);
    if (d.action == Action::Stop) return k;
    const std::size_t room = config.budget_cap == kNoBudgetCap ? d.n : config.budget_cap - k;
    draw(std::min(d.n, room));
  }
}

AllocatorConfig RegretPolicy::allocator_for(double c) const {
  AllocatorConfig a;
  a.c = c;
  a.k_min = k_min;
  a.k_init = k_init;
  a.increment = increment;
  if (cap_at_inverse_sqrt_c) {
    a.budget_cap = std::max<std::size_t>(k_init, static_cast<std::size_t>(std::llround(1.0 / std::sqrt(c))));
  } else {
    a.budget_cap = kNoBudgetCap;
  }
  return a;
}

nlohmann::ordered_json RegretPoint::to_json() const {
  nlohmann::ordered_json j;
  j["scenario"] = scenario;
  j["c"] = c;
  j["delta2"] = delta2;
  j["x_star"] = std::isfinite(oracle.x_star) ? nlohmann::ordered_json(oracle.x_star) : nlohmann::ordered_json(nullptr);
  j["k_oracle"] = oracle.k_oracle;
  j["oracle_risk"] = oracle.risk;
  j["mean_risk"] = mean_risk;
  j["regret"] = regret;
  j["std_error"] = std_error;
  j["regret_over_c"] = regret_over_c;
  j["k_mode"] = k_mode;
  j["k_mean"] = k_mean;
  j["episodes"] = episodes;
  return j;
}

RegretPoint mc_regret(const RegretScenario& scenario, double c, std::uint64_t episodes,
                      std::uint64_t seed, const RegretPolicy& policy, bool allow_small) {
  if (!allow_small && episodes < 100000) {
    throw std::invalid_argument("mc_regret: episodes must be >= 10^5");
  }
  if (episodes == 0) throw std::invalid_argument("mc_regret: episodes must be >= 1");
  const AllocatorConfig config = policy.allocator_for(c);
  config.validate();
  const PromptSpec spec(0, scenario.p_true);
  const double prior_value = deterministic_prior(spec, scenario.prior);
  const double gap = prior_value - spec.mu_true();

  RegretPoint pt;
  pt.scenario = scenario.label;
  pt.c = c;
  pt.delta2 = gap * gap;
  pt.oracle = oracle_stop(pt.delta2, c, policy.k_min);
  pt.episodes = episodes;

  const std::uint64_t base = derive_key({seed, kRegretTag, bits(c), bits(scenario.p_true), bits(prior_value)});
  RunningStats risk_stats;
  std::map<std::size_t, std::uint64_t> hist;
  double k_sum = 0.0;
  for (std::uint64_t e = 0; e < episodes; ++e) {
    const CounterStream stream(derive_key({base, e}));
    const std::size_t k = run_allocator_episode(scenario.p_true, prior_value, config, stream);
    risk_stats.add(true_risk(static_cast<double>(k), pt.delta2, c));
    ++hist[k];
    k_sum += static_cast<double>(k);
  }
  pt.mean_risk = risk_stats.mean();
  pt.regret = pt.mean_risk - pt.oracle.risk;
  pt.std_error = risk_stats.std_error();
  pt.regret_over_c = pt.regret / c;
  pt.k_mean = k_sum / static_cast<double>(episodes);
  pt.k_mode = std::max_element(hist.begin(), hist.end(), [](const auto& a, const auto& b) {
                return a.second < b.second;
              })->first;
  return pt;
}

TrendResult regret_trend(std::span<const double> ratios) {
  const std::size_t n = ratios.size();
  if (n < 2 || n > 9) throw std::invalid_argument("regret_trend: need between 2 and 9 points");
  auto kendall_s = [n](const std::vector<double>& xs) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) s += (xs[j] > xs[i]) - (xs[j] < xs[i]);
    }
    return s;
  };
  std::vector<double> xs(ratios.begin(), ratios.end());
  TrendResult t;
  t.kendall_s = kendall_s(xs);

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::uint64_t total = 0;
  std::uint64_t at_least = 0;
  std::vector<double> shuffled(n);
  do {
    for (std::size_t i = 0; i < n; ++i) shuffled[i] = xs[perm[i]];
    ++total;
    if (kendall_s(shuffled) >= t.kendall_s) ++at_least;
  } while (std::next_permutation(perm.begin(), perm.end()));
  t.p_upward = static_cast<double>(at_least) / static_cast<double>(total);

  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  t.fitted_constant = *hi;
  t.max_over_min = *lo > 0.0 ? *hi / *lo : std::numeric_limits<double>::infinity();
  t.pass = t.p_upward > 0.05 || t.max_over_min < 3.0;
  return t;
}

std::vector<GroupSizeRow> check_base_group_size(std::size_t k_lo, std::size_t k_hi) {
  if (k_lo < 1 || k_hi > 64 || k_lo > k_hi) {
    throw std::invalid_argument("check_base_group_size: range must satisfy 1 <= lo <= hi <= 64");
  }
  std::vector<GroupSizeRow> rows;
  for (std::size_t k = k_lo; k <= k_hi; ++k) {
    const auto kd = static_cast<double>(k);
    GroupSizeRow row{k, 2.0 / kd, 1.0 / std::sqrt(kd), false};
    row.robust = row.threshold >= row.gap;
    rows.push_back(row);
  }
  return rows;
}

std::string to_string(BaselineKind b) {
  switch (b) {
    case BaselineKind::Oracle: return "oracle";
    case BaselineKind::EmpiricalMean: return "empirical_mean";
    case BaselineKind::Fused: return "fused";
    case BaselineKind::PriorOnly: return "prior_only";
  }
  return "unknown";
}

std::string to_string(CheckStatus s) {
  switch (s) {
    case CheckStatus::Pass: return "pass";
    case CheckStatus::Fail: return "fail";
    case CheckStatus::Inconclusive: return "inconclusive";
  }
  return "unknown";
}

nlohmann::ordered_json GradientBoundReport::to_json() const {
  nlohmann::ordered_json j;
  j["prompt"] = prompt;
  j["theta"] = theta;
  j["baseline"] = to_string(baseline);
  j["var_trace"] = var_trace;
  j["var_trace_se"] = var_trace_se;
  j["var_oracle"] = var_oracle;
  j["phi_score"] = phi_score;
  j["mse_b"] = mse_b;
  j["bias_b"] = bias_b;
  j["L_hat"] = L_hat;
  j["bound_value"] = bound_value;
  j["bound_se"] = bound_se;
  j["slack"] = slack;
  j["trials"] = trials;
  j["status"] = to_string(status);
  return j;
}

std::vector<GradientBoundReport> check_gradient_bound(const PolicyState& policy,
                                                      std::span<const std::size_t> prompts,
                                                      const GradientCheckConfig& config) {
  if (config.trials < 2) throw std::invalid_argument("check_gradient_bound: trials must be >= 2");
  if (config.group_size < 1) throw std::invalid_argument("check_gradient_bound: group_size must be >= 1");
  std::vector<GradientBoundReport> out;
  for (std::size_t x : prompts) {
    if (x >= policy.size()) throw std::out_of_range("check_gradient_bound: prompt index out of range");
    const double theta = policy.theta(x);
    const PromptSpec spec(x, theta);
    const double mu = spec.mu_true();
    const std::size_t k = config.group_size;
    const auto kd = static_cast<double>(k);

    Engine rng = make_engine({config.seed, kGradientTag, x, static_cast<std::uint64_t>(config.baseline)});
    std::bernoulli_distribution answer(theta);
    std::binomial_distribution<std::size_t> successes(k, theta);

    std::vector<double> g(config.trials);
    std::vector<double> g_oracle(config.trials);
    RunningStats phi, cross, b_err, b_err2;
    for (std::uint64_t t = 0; t < config.trials; ++t) {
      const bool correct = answer(rng);
      const double s = score(theta, correct);
      const double r = correct ? 1.0 : -1.0;
      double b = mu;
      switch (config.baseline) {
        case BaselineKind::Oracle:
          break;
        case BaselineKind::EmpiricalMean:
          b = (2.0 * static_cast<double>(successes(rng)) - kd) / kd;
          break;
        case BaselineKind::Fused: {
          const double v_bar = (2.0 * static_cast<double>(successes(rng)) - kd) / kd;
          b = fuse(v_bar, k, prior_predict(spec, config.prior, rng).value).mu_star;
          break;
        }
        case BaselineKind::PriorOnly:
          b = prior_predict(spec, config.prior, rng).value;
          break;
      }
      g[t] = s * (r - b);
      g_oracle[t] = s * (r - mu);
      phi.add(s * s);
      cross.add(s * s * (r - mu));
      b_err.add(b - mu);
      b_err2.add((b - mu) * (b - mu));
    }

    GradientBoundReport rep;
    rep.prompt = x;
    rep.theta = theta;
    rep.baseline = config.baseline;
    rep.trials = config.trials;
    const auto [var, var_se] = variance_with_se(g);
    const auto [var_o, var_o_se] = variance_with_se(g_oracle);
    rep.var_trace = var;
    rep.var_trace_se = var_se;
    rep.var_oracle = var_o;
    rep.phi_score = phi.mean();
    rep.mse_b = b_err2.mean();
    rep.bias_b = b_err.mean();
    rep.L_hat = 2.0 * std::abs(cross.mean());
    rep.bound_value = rep.var_oracle + rep.phi_score * rep.mse_b + rep.L_hat * std::abs(rep.bias_b);
    rep.bound_se = std::sqrt(var_o_se * var_o_se +
                             std::pow(rep.mse_b * phi.std_error(), 2) +
                             std::pow(rep.phi_score * b_err2.std_error(), 2) +
                             std::pow(std::abs(rep.bias_b) * 2.0 * cross.std_error(), 2) +
                             std::pow(rep.L_hat * b_err.std_error(), 2));
    rep.slack = rep.bound_value - rep.var_trace;

    const double band = kSigmaBand * std::hypot(rep.var_trace_se, rep.bound_se);
    if ((rep.bound_value > 0.0 && rep.var_trace_se > 0.1 * rep.bound_value) ||
        (rep.bound_value == 0.0 && rep.var_trace_se > 0.0)) {
      rep.status = CheckStatus::Inconclusive;
    } else if (rep.var_trace - rep.bound_value <= band + 1e-12) {
      rep.status = CheckStatus::Pass;
    } else {
      rep.status = CheckStatus::Fail;
    }
    out.push_back(rep);
  }
  return out;
}

}  // namespace priorfuse
