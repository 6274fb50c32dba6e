#pragma once

// M-spline and I-spline bases over a boundary-padded knot sequence.
//
// The M-spline of order kappa is the normalised B-spline family of Ramsay
// (1988): every basis function is a nonnegative piecewise polynomial of degree
// kappa-1 that integrates to one over the boundary interval. The I-spline is
// its running integral from the lower boundary knot.

#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace survnma {

/// Rows are evaluation times, columns are basis functions.
using BasisMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct KnotVector {
  double lower = 0.0;
  double upper = 1.0;
  std::vector<double> internal;

  KnotVector() = default;
  KnotVector(double lo, std::vector<double> in, double hi);

  std::size_t num_internal() const { return internal.size(); }
  double width() const { return upper - lower; }

  /// All knots, boundaries included: lower, internal..., upper.
  std::vector<double> all() const;

  /// Throws std::invalid_argument unless 0 <= lower < internal... < upper.
  void validate() const;

  bool operator==(const KnotVector&) const = default;
  auto operator<=>(const KnotVector&) const = default;
};

/// Knot vector padded with kappa copies of each boundary (length L + 2 kappa).
struct AugmentedKnots {
  std::vector<double> values;
  int kappa = 1;

  std::size_t basis_dim() const { return values.size() - static_cast<std::size_t>(kappa); }
  double lower() const { return values.front(); }
  double upper() const { return values.back(); }
};

AugmentedKnots augment_knots(const KnotVector& knots, int kappa);

/// Immutable evaluator for one (knots, order) pair. Safe to share across threads.
class SplineBasis {
 public:
  SplineBasis(KnotVector knots, int kappa);

  const KnotVector& knots() const { return knots_; }
  const AugmentedKnots& augmented() const { return aug_; }
  int order() const { return aug_.kappa; }
  std::size_t dim() const { return aug_.basis_dim(); }

  /// Writes the M-spline basis at t into out (size dim()). At the upper
  /// boundary the left limit is returned.
  void mspline(double t, std::span<double> out) const;
  /// Writes the I-spline basis at t into out (size dim()).
  void ispline(double t, std::span<double> out) const;
  /// d/dt of the M-spline basis (left derivative at the upper boundary).
  void mspline_deriv(double t, std::span<double> out) const;

  BasisMatrix eval_mspline(std::span<const double> times) const;
  BasisMatrix eval_ispline(std::span<const double> times) const;
  BasisMatrix eval_mspline_deriv(std::span<const double> times) const;

  /// Throws std::out_of_range unless t lies in [lower, upper] (with a
  /// relative slack of 1e-12 * upper). Returns t clamped into the interval.
  double checked_time(double t) const;

 private:
  // Index s of the nondegenerate augmented interval [z_s, z_{s+1}) holding t.
  std::size_t span_index(double t) const;
  // Order-r M-spline values for r = 1..order, into a (size aug - 1) workspace.
  void mspline_order(double t, int order, std::span<double> work) const;

  KnotVector knots_;
  AugmentedKnots aug_;
  std::size_t first_span_ = 0;
  std::size_t last_span_ = 0;
};

/// Free-function forms operating on an augmented knot vector.
BasisMatrix eval_mspline(const AugmentedKnots& aug, std::span<const double> times);
BasisMatrix eval_ispline(const AugmentedKnots& aug, std::span<const double> times);
BasisMatrix eval_mspline_derivative_wrt_time(const AugmentedKnots& aug,
                                             std::span<const double> times);

/// Memoizes basis matrices per (knots, order, time grid). Thread-safe.
class BasisCache {
 public:
  struct Entry {
    BasisMatrix m;
    BasisMatrix i;
  };

  std::shared_ptr<const Entry> get(const KnotVector& knots, int kappa,
                                   std::span<const double> times);
  std::size_t size() const;
  void clear();

 private:
  using Key = std::tuple<KnotVector, int, std::vector<double>>;
  mutable std::mutex mutex_;
  std::map<Key, std::shared_ptr<const Entry>> entries_;
};

}  // namespace survnma
