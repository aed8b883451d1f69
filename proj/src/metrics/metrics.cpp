#include "hybridflow/metrics.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace hybridflow::metrics {

namespace {

void require_same(const char* op, std::size_t a, std::size_t b) {
  if (a != b) {
    throw std::invalid_argument(std::string(op) + ": length mismatch " + std::to_string(a) + " vs " +
                                std::to_string(b));
  }
  if (a == 0) throw std::invalid_argument(std::string(op) + ": empty input");
}

double mean_of(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double floored(double v) { return std::max(v, kVarianceFloor); }

}  // namespace

double normal_quantile(double p) { return boost::math::quantile(boost::math::normal_distribution<double>(), p); }
double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

Interval interval_from_variance(std::span<const double> mu, std::span<const double> var, double alpha) {
  require_same("interval_from_variance", mu.size(), var.size());
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("interval_from_variance: alpha must lie in (0, 1)");
  const double q = normal_quantile(1.0 - alpha / 2.0);
  Interval iv{std::vector<double>(mu.size()), std::vector<double>(mu.size()), alpha};
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (var[i] < 0.0) throw std::invalid_argument("interval_from_variance: negative variance");
    const double h = q * std::sqrt(var[i]);
    iv.lower[i] = mu[i] - h;
    iv.upper[i] = mu[i] + h;
  }
  return iv;
}

double picp(const Interval& iv, std::span<const double> y) {
  require_same("picp", iv.lower.size(), y.size());
  std::size_t hit = 0;
  for (std::size_t i = 0; i < y.size(); ++i) hit += (y[i] >= iv.lower[i] && y[i] <= iv.upper[i]) ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(y.size());
}

double mpiw(const Interval& iv) {
  if (iv.lower.empty()) throw std::invalid_argument("mpiw: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < iv.lower.size(); ++i) {
    if (iv.lower[i] > iv.upper[i]) throw std::invalid_argument("mpiw: interval with lower > upper");
    s += iv.upper[i] - iv.lower[i];
  }
  return s / static_cast<double>(iv.lower.size());
}

double winkler(const Interval& iv, std::span<const double> y, double alpha) {
  require_same("winkler", iv.lower.size(), y.size());
  if (alpha != iv.alpha) throw std::invalid_argument("winkler: alpha differs from the interval's alpha");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double l = iv.lower[i], u = iv.upper[i];
    double w = u - l;
    if (y[i] < l) w += 2.0 / alpha * (l - y[i]);
    if (y[i] > u) w += 2.0 / alpha * (y[i] - u);
    s += w;
  }
  return s / static_cast<double>(y.size());
}

double nll_score(std::span<const double> mu, std::span<const double> var, std::span<const double> y) {
  require_same("nll_score", mu.size(), y.size());
  require_same("nll_score", var.size(), y.size());
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double v = floored(var[i]);
    const double r = y[i] - mu[i];
    s += 0.5 * std::log(2.0 * std::numbers::pi * v) + r * r / (2.0 * v);
  }
  return s / static_cast<double>(y.size());
}

double crps_gaussian(std::span<const double> mu, std::span<const double> var, std::span<const double> y) {
  require_same("crps_gaussian", mu.size(), y.size());
  require_same("crps_gaussian", var.size(), y.size());
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (var[i] < 0.0) throw std::invalid_argument("crps_gaussian: negative variance");
    if (var[i] == 0.0) {
      s += std::abs(y[i] - mu[i]);
      continue;
    }
    const double sigma = std::sqrt(floored(var[i]));
    const double w = (y[i] - mu[i]) / sigma;
    s += sigma * (w * (2.0 * normal_cdf(w) - 1.0) + 2.0 * normal_pdf(w) - 1.0 / std::sqrt(std::numbers::pi));
  }
  return s / static_cast<double>(y.size());
}

std::vector<double> ece_levels(int levels) {
  std::vector<double> p(static_cast<std::size_t>(levels));
  for (int m = 1; m <= levels; ++m) p[m - 1] = static_cast<double>(m) / (levels + 1);
  return p;
}

double ece_regression(std::span<const double> mu, std::span<const double> var, std::span<const double> y,
                      std::span<const double> levels) {
  require_same("ece_regression", mu.size(), y.size());
  require_same("ece_regression", var.size(), y.size());
  if (levels.empty()) throw std::invalid_argument("ece_regression: no levels");
  double total = 0.0;
  for (double p : levels) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("ece_regression: level outside (0, 1)");
    const double q = normal_quantile(0.5 + p / 2.0);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < y.size(); ++i) hit += std::abs(y[i] - mu[i]) <= q * std::sqrt(std::max(var[i], 0.0));
    total += std::abs(static_cast<double>(hit) / static_cast<double>(y.size()) - p);
  }
  return total / static_cast<double>(levels.size());
}

double ece_regression(std::span<const double> mu, std::span<const double> var, std::span<const double> y,
                      int levels) {
  if (levels < 2) throw std::invalid_argument("ece_regression: need at least 2 levels");
  const std::vector<double> p = ece_levels(levels);
  return ece_regression(mu, var, y, p);
}

double rmse(std::span<const double> pred, std::span<const double> y) {
  require_same("rmse", pred.size(), y.size());
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (pred[i] - y[i]) * (pred[i] - y[i]);
  return std::sqrt(s / static_cast<double>(y.size()));
}

std::vector<double> average_ranks(std::span<const double> a) {
  std::vector<std::size_t> idx(a.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return a[i] < a[j]; });
  std::vector<double> ranks(a.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && a[idx[j + 1]] == a[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

Correlation correlation(std::span<const double> a, std::span<const double> b, CorrelationKind kind) {
  if (a.size() != b.size()) throw std::invalid_argument("correlation: length mismatch");
  if (a.size() < 3) throw std::invalid_argument("correlation: need at least 3 points");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  if (kind == CorrelationKind::spearman) {
    x = average_ranks(a);
    y = average_ranks(b);
  }
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) {
    return Correlation{std::numeric_limits<double>::quiet_NaN(), false,
                       sxx == 0.0 ? "first argument has zero variance" : "second argument has zero variance"};
  }
  return Correlation{std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), true, ""};
}

ComponentScores score_component(std::span<const double> mu, std::span<const double> var, std::span<const double> y,
                                double alpha, int ece_levels_count) {
  const Interval iv = interval_from_variance(mu, var, alpha);
  ComponentScores s;
  s.nll = nll_score(mu, var, y);
  s.crps = crps_gaussian(mu, var, y);
  s.ece = ece_regression(mu, var, y, ece_levels_count);
  s.picp = picp(iv, y);
  s.mpiw = mpiw(iv);
  s.winkler = winkler(iv, y, alpha);
  return s;
}

}  // namespace hybridflow::metrics
