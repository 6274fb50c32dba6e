#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "survnma/spline_basis.hpp"

namespace survnma::testing {

inline KnotVector random_knots(std::mt19937_64& rng, int n_internal, double lower = 0.0,
                               double upper = -1.0) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (upper <= lower) upper = lower + 0.5 + 10.0 * unif(rng);
  std::vector<double> internal;
  while (static_cast<int>(internal.size()) < n_internal) {
    const double t = lower + (upper - lower) * (0.02 + 0.96 * unif(rng));
    bool ok = true;
    for (double k : internal) ok = ok && std::abs(k - t) > 1e-3 * (upper - lower);
    if (ok) internal.push_back(t);
  }
  std::sort(internal.begin(), internal.end());
  return KnotVector(lower, internal, upper);
}

/// Adaptive Gauss-Kronrod integral of f over [a, b], split at breakpoints.
inline double integrate(const std::function<double(double)>& f, std::vector<double> breaks) {
  double total = 0.0;
  for (std::size_t i = 1; i < breaks.size(); ++i) {
    if (breaks[i] <= breaks[i - 1]) continue;
    total += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
        f, breaks[i - 1], breaks[i], 15, 1e-14);
  }
  return total;
}

/// Central finite difference of a scalar function.
inline double central_diff(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace survnma::testing
