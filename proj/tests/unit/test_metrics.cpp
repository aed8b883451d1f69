#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "hybridflow/metrics.hpp"

using namespace hybridflow::metrics;

namespace {

// Two-sided 95% standard normal quantile from tables.
constexpr double kZ975 = 1.959963984540054;

double phi_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Trapezoid of (F(z) - 1{y <= z})^2 over mu +- 12 sigma with a break at y.
double crps_quadrature(double mu, double sigma, double y, int n = 10000) {
  const double lo = std::min(mu - 12 * sigma, y), hi = std::max(mu + 12 * sigma, y);
  auto integrate = [&](double a, double b, bool above) {
    const double h = (b - a) / n;
    double s = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double z = a + i * h;
      const double f = phi_cdf((z - mu) / sigma) - (above ? 1.0 : 0.0);
      s += (i == 0 || i == n ? 0.5 : 1.0) * f * f;
    }
    return s * h;
  };
  return integrate(lo, y, false) + integrate(y, hi, true);
}

}  // namespace

TEST(Interval, StandardNormal95) {
  const double mu[] = {0.0}, var[] = {1.0};
  Interval iv = interval_from_variance(mu, var, 0.05);
  EXPECT_NEAR(iv.lower[0], -kZ975, 1e-9);
  EXPECT_NEAR(iv.upper[0], kZ975, 1e-9);
  EXPECT_NEAR(iv.upper[0], 1.95996, 1e-5);
}

TEST(Interval, ZeroVarianceAndMonotoneWidth) {
  const double mu[] = {2.5}, zero[] = {0.0}, one[] = {1.0};
  Interval iv = interval_from_variance(mu, zero, 0.05);
  EXPECT_EQ(iv.lower[0], 2.5);
  EXPECT_EQ(iv.upper[0], 2.5);
  double last = std::numeric_limits<double>::infinity();
  for (double eps : {0.5, 0.1, 0.01, 1e-4, 1e-8}) {
    const double w = mpiw(interval_from_variance(mu, one, 1.0 - eps));
    EXPECT_LT(w, last);
    last = w;
  }
  EXPECT_LT(last, 1e-6);
  const double neg[] = {-1.0};
  EXPECT_THROW(interval_from_variance(mu, neg, 0.05), std::invalid_argument);
  EXPECT_THROW(interval_from_variance(mu, one, 1.0), std::invalid_argument);
}

TEST(Picp, CoverageCases) {
  Interval iv{{-1, 0, 2}, {1, 1, 3}, 0.05};
  const double inside[] = {0.0, 0.5, 2.5};
  EXPECT_EQ(picp(iv, inside), 1.0);
  const double on_bounds[] = {-1.0, 1.0, 3.0};
  EXPECT_EQ(picp(iv, on_bounds), 1.0);
  const double one_out[] = {-1.5, 1.0, 3.0};
  EXPECT_DOUBLE_EQ(picp(iv, one_out), 2.0 / 3.0);
  EXPECT_THROW(picp(Interval{}, std::span<const double>{}), std::invalid_argument);
}

TEST(Picp, MonteCarloNominal) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  const std::size_t N = 100000;
  std::vector<double> y(N);
  for (double& v : y) v = n(rng);
  Interval iv{std::vector<double>(N, -1.95996), std::vector<double>(N, 1.95996), 0.05};
  EXPECT_NEAR(picp(iv, y), 0.95, 0.005);
}

TEST(Mpiw, Widths) {
  EXPECT_EQ(mpiw(Interval{{0, 1}, {2, 3}, 0.05}), 2.0);
  EXPECT_EQ(mpiw(Interval{{0, 0}, {1, 3}, 0.05}), 2.0);
  std::vector<double> mu(4, 0.0), var(4, 1.0);
  EXPECT_NEAR(mpiw(interval_from_variance(mu, var, 0.05)), 2 * kZ975, 1e-9);
  EXPECT_NEAR(2 * kZ975, 3.9199, 1e-4);
  EXPECT_THROW(mpiw(Interval{{1}, {0}, 0.05}), std::invalid_argument);
}

TEST(Winkler, PiecewiseHandCases) {
  Interval iv{{-1}, {1}, 0.05};
  const double covered[] = {0.3};
  EXPECT_EQ(winkler(iv, covered, 0.05), 2.0);
  const double above[] = {1.1};
  EXPECT_NEAR(winkler(iv, above, 0.05), 6.0, 1e-12);
  Interval iv10{{-1}, {1}, 0.1};
  const double below[] = {-1.05};
  EXPECT_NEAR(winkler(iv10, below, 0.1), 3.0, 1e-12);
  EXPECT_THROW(winkler(iv10, below, 0.05), std::invalid_argument);
}

TEST(Winkler, NeverBelowMpiwEqualWhenAllCovered) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> mu(20), var(20), y(20);
    for (std::size_t i = 0; i < 20; ++i) {
      mu[i] = n(rng);
      var[i] = std::exp(n(rng));
      y[i] = n(rng) * 2;
    }
    Interval iv = interval_from_variance(mu, var, 0.05);
    const double w = winkler(iv, y, 0.05), m = mpiw(iv);
    EXPECT_GE(w, m);
    EXPECT_EQ(w == m, picp(iv, y) == 1.0);
  }
}

TEST(Nll, AnalyticCases) {
  const double mu[] = {0.0}, var[] = {1.0}, y0[] = {0.0}, y1[] = {1.0};
  EXPECT_NEAR(nll_score(mu, var, y0), 0.5 * std::log(2 * std::numbers::pi), 1e-12);
  EXPECT_NEAR(nll_score(mu, var, y0), 0.9189, 1e-4);
  EXPECT_NEAR(nll_score(mu, var, y1), 1.4189, 1e-4);
  double last = nll_score(mu, var, y1);
  for (double v : {10.0, 1e3, 1e6, 1e12}) {
    const double big[] = {v};
    const double s = nll_score(mu, big, y1);
    EXPECT_GT(s, last);
    last = s;
  }
  const double zero[] = {0.0};
  EXPECT_TRUE(std::isfinite(nll_score(mu, zero, y0)));
}

TEST(Crps, ClosedFormCases) {
  const double mu[] = {0.0}, var[] = {1.0}, y[] = {0.0};
  const double expected = 2.0 / std::sqrt(2 * std::numbers::pi) - 1.0 / std::sqrt(std::numbers::pi);
  EXPECT_NEAR(crps_gaussian(mu, var, y), expected, 1e-12);
  EXPECT_NEAR(crps_quadrature(0, 1, 0), 0.23369, 1e-5);
  const double zero[] = {0.0}, y2[] = {-2.5};
  EXPECT_EQ(crps_gaussian(mu, zero, y2), 2.5);
}

TEST(Crps, MatchesQuadratureOnRandomTriples) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> s(0.1, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    const double mu[] = {n(rng) * 2}, sd = s(rng), var[] = {sd * sd}, y[] = {n(rng) * 3};
    EXPECT_NEAR(crps_gaussian(mu, var, y), crps_quadrature(mu[0], sd, y[0]), 1e-4);
  }
}

TEST(Ece, SelfConsistentSimulationIsCalibrated) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.2, 2.0);
  const std::size_t N = 100000;
  std::vector<double> mu(N), var(N), y(N), doubled(N);
  for (std::size_t i = 0; i < N; ++i) {
    mu[i] = n(rng);
    var[i] = u(rng);
    y[i] = mu[i] + std::sqrt(var[i]) * n(rng);
    doubled[i] = 2 * var[i];
  }
  const double calibrated = 100 * ece_regression(mu, var, y, 10);
  EXPECT_LE(calibrated, 0.5);
  EXPECT_GT(100 * ece_regression(mu, doubled, y, 10), calibrated);
}

TEST(Ece, SingleLevelExactCoverage) {
  // 20 points, 19 well inside the 95% interval and one far outside.
  std::vector<double> mu(20, 0.0), var(20, 1.0), y(20, 0.1);
  y[7] = 10.0;
  const double level[] = {0.95};
  EXPECT_NEAR(ece_regression(mu, var, y, level), 0.0, 1e-12);
  EXPECT_THROW(ece_regression(mu, var, y, 1), std::invalid_argument);
  EXPECT_EQ(ece_levels(3), (std::vector<double>{0.25, 0.5, 0.75}));
}

TEST(Rmse, Arithmetic) {
  const double y[] = {1, 2}, same[] = {1, 2}, pm[] = {2, 1}, y2[] = {0, 0}, p2[] = {3, 4};
  EXPECT_EQ(rmse(same, y), 0.0);
  EXPECT_EQ(rmse(pm, y), 1.0);
  EXPECT_DOUBLE_EQ(rmse(p2, y2), std::sqrt(12.5));
}

TEST(Correlation, MonotoneCases) {
  const double a[] = {0.1, 0.5, 2.0, 3.5, 10.0};
  double b[5], c[5];
  for (int i = 0; i < 5; ++i) {
    b[i] = 2 * a[i] + 3;
    c[i] = a[i] * a[i] * a[i];
  }
  EXPECT_NEAR(correlation(a, b, CorrelationKind::pearson).value, 1.0, 1e-12);
  EXPECT_NEAR(correlation(a, b, CorrelationKind::spearman).value, 1.0, 1e-12);
  EXPECT_NEAR(correlation(a, c, CorrelationKind::spearman).value, 1.0, 1e-12);
  EXPECT_LT(correlation(a, c, CorrelationKind::pearson).value, 1.0);
}

TEST(Correlation, HandRanks) {
  const double a[] = {1, 2, 3}, b[] = {3, 1, 2};
  EXPECT_NEAR(correlation(a, b, CorrelationKind::spearman).value, -0.5, 1e-12);
  const double ties[] = {5, 1, 5, 2};
  EXPECT_EQ(average_ranks(ties), (std::vector<double>{3.5, 1, 3.5, 2}));
}

TEST(Correlation, DegenerateAndNull) {
  const double a[] = {1, 2, 3}, flat[] = {4, 4, 4};
  Correlation c = correlation(a, flat, CorrelationKind::pearson);
  EXPECT_FALSE(c.defined);
  EXPECT_TRUE(std::isnan(c.value));
  EXPECT_FALSE(c.diagnostic.empty());
  EXPECT_THROW(correlation(std::span<const double>(a, 2), std::span<const double>(a, 2), CorrelationKind::pearson),
               std::invalid_argument);

  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> x(10000), y(10000);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = n(rng);
    y[i] = n(rng);
  }
  EXPECT_LT(std::abs(correlation(x, y, CorrelationKind::spearman).value), 0.05);
  EXPECT_NEAR(correlation(x, x, CorrelationKind::spearman).value, 1.0, 1e-12);
  EXPECT_NEAR(correlation(x, x, CorrelationKind::pearson).value, 1.0, 1e-12);
}

TEST(Correlation, SpearmanInvariantUnderIncreasingTransforms) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> x(50), y(50), fx(50);
  for (std::size_t i = 0; i < 50; ++i) {
    x[i] = n(rng);
    y[i] = x[i] + n(rng);
    fx[i] = std::exp(3 * x[i]) + 1;
  }
  EXPECT_DOUBLE_EQ(correlation(x, y, CorrelationKind::spearman).value,
                   correlation(fx, y, CorrelationKind::spearman).value);
}
