#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

namespace survnma::stats {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // 0.5 log(2 pi)

inline double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

/// Type-7 quantile of ascending data.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  const auto n = sorted.size();
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  const double h = p * static_cast<double>(n - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= n) return sorted[n - 1];
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

inline double quantile(std::vector<double> x, double p) {
  std::sort(x.begin(), x.end());
  return quantile_sorted(x, p);
}

inline double mean(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

/// Sample variance (n - 1 denominator).
inline double variance(std::span<const double> x) {
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

/// log Normal(x | 0, sd^2), with d/dx = -x / sd^2.
inline double normal_lpdf(double x, double sd) {
  return -kLogSqrt2Pi - std::log(sd) - 0.5 * (x / sd) * (x / sd);
}

/// log half-Normal(x | 0, sd^2) for x > 0.
inline double half_normal_lpdf(double x, double sd) {
  return std::numbers::ln2 + normal_lpdf(x, sd);
}

}  // namespace survnma::stats
