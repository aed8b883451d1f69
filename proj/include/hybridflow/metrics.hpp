#pragma once

#include <span>
#include <string>
#include <vector>

namespace hybridflow::metrics {

inline constexpr double kVarianceFloor = 1e-12;

// Central Gaussian intervals mu +- q * sigma with q the (1 - alpha/2) quantile.
struct Interval {
  std::vector<double> lower;
  std::vector<double> upper;
  double alpha = 0.05;
};

double normal_quantile(double p);
double normal_cdf(double x);
double normal_pdf(double x);

Interval interval_from_variance(std::span<const double> mu, std::span<const double> var, double alpha = 0.05);

// Coverage with closed endpoints.
double picp(const Interval& iv, std::span<const double> y);
double mpiw(const Interval& iv);
// alpha must match the alpha the intervals were built with.
double winkler(const Interval& iv, std::span<const double> y, double alpha);

double nll_score(std::span<const double> mu, std::span<const double> var, std::span<const double> y);
double crps_gaussian(std::span<const double> mu, std::span<const double> var, std::span<const double> y);

// Mean |empirical coverage - nominal| over central intervals at the given
// nominal levels; a fraction in [0, 1].
double ece_regression(std::span<const double> mu, std::span<const double> var, std::span<const double> y,
                      std::span<const double> levels);
// Levels m / (levels + 1), m = 1..levels.
double ece_regression(std::span<const double> mu, std::span<const double> var, std::span<const double> y,
                      int levels = 10);
std::vector<double> ece_levels(int levels);

double rmse(std::span<const double> pred, std::span<const double> y);

enum class CorrelationKind { pearson, spearman };

struct Correlation {
  double value = 0.0;  // NaN when undefined
  bool defined = false;
  std::string diagnostic;
};

// Ties get average ranks (1-based).
std::vector<double> average_ranks(std::span<const double> a);
Correlation correlation(std::span<const double> a, std::span<const double> b, CorrelationKind kind);

// Every interval and distribution score for one (mean, variance) pair, with
// the variance treated as the full Gaussian variance. ece is a fraction.
struct ComponentScores {
  double nll = 0.0;
  double crps = 0.0;
  double ece = 0.0;
  double picp = 0.0;
  double mpiw = 0.0;
  double winkler = 0.0;
};

ComponentScores score_component(std::span<const double> mu, std::span<const double> var, std::span<const double> y,
                                double alpha = 0.05, int ece_levels = 10);

}  // namespace hybridflow::metrics
