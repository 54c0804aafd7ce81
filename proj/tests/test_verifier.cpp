#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "priorfuse/verifier.hpp"

using namespace priorfuse;
using doctest::Approx;

namespace {

// Pascal-triangle binomial coefficient, independent of the log-space pmf.
double choose(std::size_t n, std::size_t r) {
  double c = 1.0;
  for (std::size_t i = 1; i <= r; ++i) c = c * static_cast<double>(n - r + i) / static_cast<double>(i);
  return c;
}

double pmf(std::size_t k, std::size_t x, double p) {
  return choose(k, x) * std::pow(p, static_cast<double>(x)) * std::pow(1 - p, static_cast<double>(k - x));
}

// Fused baseline moments from the closed-form rule, written out directly.
EstimatorMoments oracle_moments(double p, double v, std::size_t k) {
  const double mu = 2 * p - 1;
  EstimatorMoments m;
  for (std::size_t x = 0; x <= k; ++x) {
    const double vb = -1.0 + 2.0 * x / k;
    const double d2 = std::max(0.0, (vb - v) * (vb - v) - 1.0 / k);
    const double w = d2 / (d2 + 1.0 / k);
    const double est = w * vb + (1 - w) * v;
    m.mean += pmf(k, x, p) * est;
    m.mse += pmf(k, x, p) * (est - mu) * (est - mu);
  }
  m.bias = m.mean - mu;
  return m;
}

}  // namespace

TEST_CASE("binomial pmf") {
  CHECK(binomial_pmf(4, 2, 0.5) == Approx(0.375));
  CHECK(binomial_pmf(5, 5, 1.0) == 1.0);
  CHECK(binomial_pmf(5, 4, 1.0) == 0.0);
  CHECK(binomial_pmf(5, 0, 0.0) == 1.0);
  for (std::size_t k : {1u, 7u, 30u}) {
    double total = 0.0;
    for (std::size_t x = 0; x <= k; ++x) {
      CHECK(binomial_pmf(k, x, 0.3) == Approx(pmf(k, x, 0.3)).epsilon(1e-10));
      total += binomial_pmf(k, x, 0.3);
    }
    CHECK(total == Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("estimator moments by enumeration") {
  const auto perfect = enumerate_estimator_moments(1.0, 1.0, 4);
  CHECK(perfect.bias == 0.0);
  CHECK(perfect.mse == 0.0);
  for (double p : {0.1, 0.5, 0.9}) {
    for (double v : {-0.7, 0.0, 0.8}) {
      for (std::size_t k : {1u, 4u, 16u}) {
        const auto a = enumerate_estimator_moments(p, v, k);
        const auto b = oracle_moments(p, v, k);
        CHECK(a.mean == Approx(b.mean).epsilon(1e-12));
        CHECK(a.mse == Approx(b.mse).epsilon(1e-12));
        CHECK(std::abs(a.bias) <= 1.0 / std::sqrt(static_cast<double>(k)) + kLatticeTol);
      }
    }
  }
  CHECK_THROWS(enumerate_estimator_moments(0.5, 0.0, 0));
}

TEST_CASE("false rejection rate") {
  // Oracle: direct sum over outcomes outside the acceptance band.
  for (double p : {0.0, 0.2, 0.5, 0.9}) {
    const std::size_t k = 4;
    double expected = 0.0;
    for (std::size_t x = 0; x <= k; ++x) {
      const double gap = -1.0 + 2.0 * x / k - (2 * p - 1);
      if (gap * gap > 1.0 / k) expected += pmf(k, x, p);
    }
    CHECK(false_rejection_exact(p, k) == Approx(expected).epsilon(1e-12));
  }
  CHECK(false_rejection_exact(1.0, 4) == 0.0);
  const auto r = false_rejection_mc(0.3, 4, 200000, 9);
  CHECK(r.pass);
  CHECK(std::abs(r.estimate - false_rejection_exact(0.3, 4)) <= kSigmaBand * r.std_error + 1e-12);
}

TEST_CASE("fixed weight mse") {
  CHECK(fixed_weight_mse_theory(0.7, 0.1, 4, 0.0) == Approx(0.09));
  CHECK(fixed_weight_mse_theory(0.5, 0.3, 4, 1.0) == Approx(0.25));
  const auto zero = mc_fixed_weight_mse(0.7, 0.1, 4, 0.0, 100000, 1);
  CHECK(zero.estimate == Approx(0.09).epsilon(1e-12));
  CHECK(zero.pass);
  const auto one = mc_fixed_weight_mse(0.5, 0.3, 4, 1.0, 100000, 2);
  CHECK(one.pass);
  CHECK(std::abs(one.estimate - 0.25) <= kSigmaBand * one.std_error);
  CHECK_THROWS(mc_fixed_weight_mse(0.5, 0.3, 4, 1.0, 1000, 2));
}

TEST_CASE("oracle stopping time") {
  const auto none = oracle_stop(0.0, 0.0039, 4);
  CHECK(none.k_oracle == 4);
  CHECK(none.x_star == -std::numeric_limits<double>::infinity());

  const auto s = oracle_stop(0.25, 0.0039, 4);
  CHECK(s.x_star == Approx(12.0128).epsilon(1e-4));
  // Brute-force scan over a wide range.
  std::size_t best = 4;
  for (std::size_t k = 4; k < 2000; ++k) {
    if (true_risk(k, 0.25, 0.0039) < true_risk(best, 0.25, 0.0039)) best = k;
  }
  CHECK(s.k_oracle == best);
  CHECK(s.risk == Approx(true_risk(best, 0.25, 0.0039)));
}

TEST_CASE("allocator episodes") {
  AllocatorConfig cfg;
  const CounterStream stream(derive_key({3}));
  CHECK(run_allocator_episode(1.0, 1.0, cfg, stream) == 4);
  CHECK(run_allocator_episode(0.0, 0.8, cfg, stream) == 16);
  CHECK(RegretPolicy{}.allocator_for(0.0039).budget_cap == 16);
  CHECK(RegretPolicy{}.allocator_for(0.02).budget_cap == 7);
}

TEST_CASE("regret is zero when rewards are deterministic and the prior is right") {
  const RegretScenario sc{"exact", 1.0, scenario::Exact{}};
  const auto r = mc_regret(sc, 0.0039, 1000, 1, {}, true);
  CHECK(r.regret == Approx(0.0).epsilon(1e-12));
  CHECK(r.k_mode == 4);
  CHECK_THROWS(mc_regret(sc, 0.0039, 1000, 1));
}

TEST_CASE("trend test") {
  const std::vector<double> up{1, 2, 3, 4, 5};
  const auto t = regret_trend(up);
  CHECK(t.kendall_s == 10);
  CHECK(t.p_upward == Approx(1.0 / 120.0));
  CHECK(t.max_over_min == Approx(5.0));
  CHECK_FALSE(t.pass);

  const std::vector<double> mild{1.0, 1.1, 1.2, 1.3, 1.4};
  CHECK(regret_trend(mild).pass);
  const std::vector<double> down{5, 4, 3, 2, 1};
  CHECK(regret_trend(down).pass);
  CHECK(regret_trend(down).p_upward == Approx(1.0));
  const std::vector<double> with_zero{0.0, 1.0, 2.0, 3.0, 4.0};
  CHECK(std::isinf(regret_trend(with_zero).max_over_min));
  const std::vector<double> one{1.0};
  CHECK_THROWS(regret_trend(one));
}

TEST_CASE("base group size table") {
  const auto rows = check_base_group_size(1, 64);
  CHECK(rows.size() == 64);
  for (const auto& r : rows) {
    CHECK(r.gap == Approx(2.0 / r.k));
    CHECK(r.robust == (r.k >= 4));
  }
  CHECK_THROWS(check_base_group_size(0, 4));
  CHECK_THROWS(check_base_group_size(4, 65));
}

TEST_CASE("running stats merge") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(2.0, 3.0);
  RunningStats all;
  RunningStats a;
  RunningStats b;
  for (int i = 0; i < 1000; ++i) {
    const double x = n(rng);
    all.add(x);
    (i % 3 ? a : b).add(x);
  }
  a.merge(b);
  CHECK(a.count() == all.count());
  CHECK(a.mean() == Approx(all.mean()).epsilon(1e-12));
  CHECK(a.variance() == Approx(all.variance()).epsilon(1e-10));
}

TEST_CASE("gradient bound holds and fusion beats the group mean") {
  const std::vector<double> thetas{0.1, 0.5, 0.9};
  const auto policy = PolicyState::from_probabilities(thetas);
  const std::vector<std::size_t> idx{0, 1, 2};
  GradientCheckConfig fused;
  fused.baseline = BaselineKind::Fused;
  fused.trials = 100000;
  fused.seed = 4;
  GradientCheckConfig mean = fused;
  mean.baseline = BaselineKind::EmpiricalMean;
  const auto f = check_gradient_bound(policy, idx, fused);
  const auto m = check_gradient_bound(policy, idx, mean);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    CHECK(f[i].status == CheckStatus::Pass);
    CHECK(m[i].status == CheckStatus::Pass);
    CHECK(f[i].var_trace < m[i].var_trace);
  }
  GradientCheckConfig oracle = fused;
  oracle.baseline = BaselineKind::Oracle;
  for (const auto& r : check_gradient_bound(policy, idx, oracle)) {
    CHECK(r.mse_b == 0.0);
    CHECK(r.var_trace == Approx(r.var_oracle).epsilon(0.02));
  }
}
