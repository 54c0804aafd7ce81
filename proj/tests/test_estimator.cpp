#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "priorfuse/estimator.hpp"

using namespace priorfuse;
using doctest::Approx;

namespace {
RolloutGroup group_of(std::vector<int> values) {
  RolloutGroup g(7);
  for (int v : values) g.append(Reward(v));
  return g;
}
}  // namespace

TEST_CASE("reward accepts only plus or minus one") {
  CHECK(Reward(1).value() == 1);
  CHECK(Reward(-1).value() == -1);
  CHECK_THROWS_AS(Reward(0), std::invalid_argument);
  CHECK_THROWS_AS(Reward(2), std::invalid_argument);
  CHECK(Reward::success().is_success());
  CHECK_FALSE(Reward::failure().is_success());
}

TEST_CASE("group mean") {
  CHECK(empirical_mean(group_of({1, 1, 1, 1})) == 1.0);
  CHECK(empirical_mean(group_of({1, 1, 1, -1})) == 0.5);
  CHECK(empirical_mean(group_of({1, -1})) == 0.0);
  CHECK_THROWS_WITH_AS(empirical_mean(RolloutGroup(1)), doctest::Contains("no observations"), std::invalid_argument);

  const auto g = group_of({1, -1, -1, 1, 1});
  CHECK(g.k() == 5);
  CHECK(g.successes() == 3);
  CHECK(g.prompt_id() == 7);
}

TEST_CASE("group mean lies on the 2/k lattice") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 1 + static_cast<int>(rng() % 64);
    RolloutGroup g(0);
    for (int i = 0; i < k; ++i) g.append(rng() % 2 ? Reward::success() : Reward::failure());
    const double j = (empirical_mean(g) + 1.0) * k / 2.0;
    CHECK(std::abs(j - std::round(j)) < kLatticeTol * k);
  }
}

TEST_CASE("noise variance bound") {
  CHECK(noise_variance_bound(4) == 0.25);
  CHECK(noise_variance_bound(1) == 1.0);
  CHECK(noise_variance_bound(16) == 0.0625);
  CHECK_THROWS_AS(noise_variance_bound(0), std::invalid_argument);
}

TEST_CASE("empirical bias") {
  CHECK(empirical_bias(1.0, 0.8, 4) == 0.0);
  CHECK(empirical_bias(0.3, 0.3, 9) == 0.0);
  CHECK(empirical_bias(-1.0, 0.8, 4) == Approx(2.99).epsilon(1e-12));
  CHECK_THROWS_AS(empirical_bias(1.5, 0.0, 4), std::invalid_argument);
  CHECK_THROWS_AS(empirical_bias(0.0, -1.2, 4), std::invalid_argument);
  CHECK_THROWS_AS(empirical_bias(0.0, 0.0, 0), std::invalid_argument);
}

TEST_CASE("shrinkage weight") {
  CHECK(shrinkage_weight(0.0, 0.25) == 0.0);
  CHECK(shrinkage_weight(0.25, 0.25) == 0.5);
  CHECK(shrinkage_weight(2.99, 0.25) == Approx(2.99 / 3.24));
  CHECK_THROWS_AS(shrinkage_weight(1.0, 0.0), std::invalid_argument);
  CHECK(shrinkage_weight(1.0, 0.25) < shrinkage_weight(1.1, 0.25));
  CHECK(shrinkage_weight(1e12, 0.25) == Approx(1.0));
}

TEST_CASE("fused baseline and std") {
  CHECK(fuse_baseline(0.3, -0.4, 0.0) == -0.4);
  CHECK(fuse_baseline(0.3, -0.4, 1.0) == 0.3);
  const double w = 2.99 / 3.24;
  CHECK(fuse_baseline(-1.0, 0.8, w) == Approx(-w + (1.0 - w) * 0.8));
  CHECK(fuse_baseline(-1.0, 0.8, 0.9228) == Approx(-0.86104));

  CHECK(fused_std(0.0) == 1.0);
  CHECK(fused_std(0.8) == Approx(0.6));
  CHECK(fused_std(1.0) == kStdFloor);
  CHECK(fused_std(-1.0) == kStdFloor);
}

TEST_CASE("fusion over a group") {
  // Three of four correct against V = 0.8: accepted, baseline is the prior.
  const auto f = fuse(group_of({1, 1, 1, -1}), PriorEstimate::from_value(0.8));
  CHECK(f.sigma2_hat == 0.25);
  CHECK(f.delta2_hat == 0.0);
  CHECK(f.w_hat == 0.0);
  CHECK(f.mu_star == 0.8);
  CHECK(f.sigma_star == Approx(0.6));

  const auto g = fuse(-1.0, 4, 0.8);
  CHECK(g.delta2_hat == Approx(2.99));
  CHECK(g.w_hat == Approx(2.99 / 3.24));
  CHECK(g.mu_star == Approx(-0.861).epsilon(1e-3));
}

TEST_CASE("advantages") {
  FusionResult unit;
  unit.mu_star = 0.0;
  unit.sigma_star = 1.0;
  CHECK(advantages(group_of({1}), unit)[0] == 1.0);

  FusionResult f;
  f.mu_star = 0.8;
  f.sigma_star = 0.6;
  const auto a = advantages(group_of({1, -1}), f);
  CHECK(a[0] == Approx(1.0 / 3.0));
  CHECK(a[1] == Approx(-3.0));

  FusionResult top;
  top.mu_star = 1.0;
  top.sigma_star = kStdFloor;
  for (double x : advantages(group_of({1, 1, 1}), top)) CHECK(x == 0.0);
}

TEST_CASE("advantage mean equals (v_bar - mu*) / sigma*") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> prior(-1.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const int k = 1 + static_cast<int>(rng() % 32);
    RolloutGroup g(0);
    for (int i = 0; i < k; ++i) g.append(rng() % 3 ? Reward::success() : Reward::failure());
    const auto f = fuse(g, PriorEstimate::from_value(prior(rng)));
    const auto a = advantages(g, f);
    double mean = 0.0;
    for (double x : a) mean += x / k;
    CHECK(mean == Approx((empirical_mean(g) - f.mu_star) / f.sigma_star).epsilon(1e-9));
    if (f.w_hat == 1.0) CHECK(std::abs(mean) < 1e-12);
  }
}

TEST_CASE("theoretical mse and optimal weight") {
  CHECK(theoretical_mse(0.0, 0.25, 0.09) == 0.09);
  CHECK(theoretical_mse(1.0, 0.25, 0.09) == 0.25);
  CHECK(theoretical_mse(0.5, 0.25, 0.09) == Approx(0.085));
  CHECK(optimal_weight(0.3, 0.3) == 0.5);
  CHECK(optimal_weight(0.25, 0.0) == 0.0);
  CHECK(optimal_weight(0.25, 0.09) == Approx(0.09 / 0.34));
  CHECK_THROWS_WITH_AS(optimal_weight(0.0, 0.0), doctest::Contains("degenerate"), std::invalid_argument);
}

TEST_CASE("optimal weight beats a fine grid search") {
  // Oracle: minimize the quadratic by brute force on a 10^-4 grid.
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> s(1e-3, 1.0);
  std::uniform_real_distribution<double> d(0.0, 4.0);
  for (int trial = 0; trial < 100; ++trial) {
    const double s2 = s(rng);
    const double d2 = d(rng);
    double best_w = 0.0;
    double best = 1e300;
    for (int i = 0; i <= 10000; ++i) {
      const double w = i / 10000.0;
      const double m = w * w * s2 + (1 - w) * (1 - w) * d2;
      if (m < best) {
        best = m;
        best_w = w;
      }
    }
    CHECK(optimal_weight(s2, d2) == Approx(best_w).epsilon(2e-4));
    CHECK(theoretical_mse(optimal_weight(s2, d2), s2, d2) <= best * (1 + 1e-14));
  }
}

TEST_CASE("weight is zero exactly on the acceptance region") {
  for (int k = 1; k <= 64; ++k) {
    for (int j = 0; j <= k; ++j) {
      const double v_bar = -1.0 + 2.0 * j / k;
      for (int vi = 0; vi <= 40; ++vi) {
        const double v = -1.0 + vi / 20.0;
        const double d2 = empirical_bias(v_bar, v, k);
        const double w = shrinkage_weight(d2, noise_variance_bound(k));
        CHECK(w >= 0.0);
        CHECK(w < 1.0);
        CHECK((w == 0.0) == ((v_bar - v) * (v_bar - v) <= 1.0 / k));
      }
    }
  }
}

TEST_CASE("fused baseline stays between the mean and the prior") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> w01(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const double a = u(rng);
    const double b = u(rng);
    const double m = fuse_baseline(a, b, w01(rng));
    CHECK(m >= std::min(a, b) - 1e-15);
    CHECK(m <= std::max(a, b) + 1e-15);
  }
}

TEST_CASE("group sample std is a diagnostic only") {
  const auto g = group_of({1, 1, 1, -1});
  CHECK(group_sample_std(g.rewards()) == Approx(std::sqrt(0.75)));
  const auto f = fuse(g, PriorEstimate::from_value(0.8));
  CHECK(f.sigma_star != Approx(group_sample_std(g.rewards())));
}

TEST_CASE("prior scale conversion") {
  const auto p = PriorEstimate::from_probability(0.9);
  CHECK(p.value == Approx(0.8));
  const auto v = PriorEstimate::from_value(-0.5);
  CHECK(v.p == Approx(0.25));
  CHECK_THROWS_AS(PriorEstimate::from_probability(1.2), std::invalid_argument);
  CHECK_THROWS_AS(PriorEstimate::from_value(-1.01), std::invalid_argument);
}
