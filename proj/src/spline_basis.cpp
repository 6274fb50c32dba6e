#include "survnma/spline_basis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace survnma {

KnotVector::KnotVector(double lo, std::vector<double> in, double hi)
    : lower(lo), upper(hi), internal(std::move(in)) {}

std::vector<double> KnotVector::all() const {
  std::vector<double> out;
  out.reserve(internal.size() + 2);
  out.push_back(lower);
  out.insert(out.end(), internal.begin(), internal.end());
  out.push_back(upper);
  return out;
}

void KnotVector::validate() const {
  if (!std::isfinite(lower) || !std::isfinite(upper)) {
    throw std::invalid_argument("knot vector: boundaries must be finite");
  }
  if (lower < 0.0) {
    throw std::invalid_argument("knot vector: lower boundary must be >= 0");
  }
  const auto knots = all();
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (!(knots[i] > knots[i - 1])) {
      std::ostringstream msg;
      msg << "knot vector: knots must be strictly increasing (position " << i
          << ": " << knots[i - 1] << " >= " << knots[i] << ")";
      throw std::invalid_argument(msg.str());
    }
  }
}

AugmentedKnots augment_knots(const KnotVector& knots, int kappa) {
  if (kappa < 1) throw std::invalid_argument("augment_knots: kappa must be >= 1");
  knots.validate();
  AugmentedKnots aug;
  aug.kappa = kappa;
  aug.values.reserve(knots.internal.size() + 2 * static_cast<std::size_t>(kappa));
  aug.values.insert(aug.values.end(), static_cast<std::size_t>(kappa), knots.lower);
  aug.values.insert(aug.values.end(), knots.internal.begin(), knots.internal.end());
  aug.values.insert(aug.values.end(), static_cast<std::size_t>(kappa), knots.upper);
  return aug;
}

SplineBasis::SplineBasis(KnotVector knots, int kappa)
    : knots_(std::move(knots)), aug_(augment_knots(knots_, kappa)) {
  const auto k = static_cast<std::size_t>(kappa);
  first_span_ = k - 1;
  last_span_ = k - 1 + knots_.internal.size();
}

double SplineBasis::checked_time(double t) const {
  const double tol = 1e-12 * std::abs(knots_.upper);
  if (!std::isfinite(t) || t < knots_.lower - tol || t > knots_.upper + tol) {
    std::ostringstream msg;
    msg << "time " << t << " outside the boundary interval [" << knots_.lower << ", "
        << knots_.upper << "]";
    throw std::out_of_range(msg.str());
  }
  return std::clamp(t, knots_.lower, knots_.upper);
}

std::size_t SplineBasis::span_index(double t) const {
  const auto& z = aug_.values;
  if (t >= knots_.upper) return last_span_;
  // Last s in the nondegenerate range with z_s <= t.
  auto it = std::upper_bound(z.begin() + static_cast<std::ptrdiff_t>(first_span_),
                             z.begin() + static_cast<std::ptrdiff_t>(last_span_ + 1), t);
  return static_cast<std::size_t>(it - z.begin()) - 1;
}

void SplineBasis::mspline_order(double t, int order, std::span<double> work) const {
  const auto& z = aug_.values;
  const std::size_t n_aug = z.size();
  const std::size_t span = span_index(t);
  std::fill(work.begin(), work.end(), 0.0);
  work[span] = 1.0 / (z[span + 1] - z[span]);
  for (int r = 2; r <= order; ++r) {
    const auto ru = static_cast<std::size_t>(r);
    // In-place update is safe going upward: entry s reads s and s+1 of order r-1.
    for (std::size_t s = 0; s + ru < n_aug; ++s) {
      const double denom = (r - 1) * (z[s + ru] - z[s]);
      if (denom <= 0.0) {
        work[s] = 0.0;
        continue;
      }
      work[s] = r * ((t - z[s]) * work[s] + (z[s + ru] - t) * work[s + 1]) / denom;
    }
    work[n_aug - ru] = 0.0;
  }
}

void SplineBasis::mspline(double t, std::span<double> out) const {
  t = checked_time(t);
  std::vector<double> work(aug_.values.size() - 1);
  mspline_order(t, aug_.kappa, work);
  std::copy_n(work.begin(), dim(), out.begin());
}

void SplineBasis::mspline_deriv(double t, std::span<double> out) const {
  t = checked_time(t);
  const int k = aug_.kappa;
  if (k == 1) {
    std::fill_n(out.begin(), dim(), 0.0);
    return;
  }
  const auto& z = aug_.values;
  std::vector<double> lower_order(z.size() - 1);
  mspline_order(t, k - 1, lower_order);
  const auto ku = static_cast<std::size_t>(k);
  for (std::size_t s = 0; s < dim(); ++s) {
    const double width = z[s + ku] - z[s];
    out[s] = width > 0.0 ? k * (lower_order[s] - lower_order[s + 1]) / width : 0.0;
  }
}

void SplineBasis::ispline(double t, std::span<double> out) const {
  t = checked_time(t);
  const auto& z = aug_.values;
  const std::size_t n = dim();
  // Order kappa+1 B-splines on the sequence with one more copy of each boundary.
  // The I-spline column s is the sum of those B-splines with index > s.
  std::vector<double> e;
  e.reserve(z.size() + 2);
  e.push_back(z.front());
  e.insert(e.end(), z.begin(), z.end());
  e.push_back(z.back());

  const std::size_t span = span_index(t) + 1;
  std::vector<double> b(e.size() - 1, 0.0);
  b[span] = 1.0;
  const int order = aug_.kappa + 1;
  for (int r = 2; r <= order; ++r) {
    const auto ru = static_cast<std::size_t>(r);
    for (std::size_t i = 0; i + ru < e.size(); ++i) {
      double v = 0.0;
      const double left = e[i + ru - 1] - e[i];
      const double right = e[i + ru] - e[i + 1];
      if (left > 0.0) v += (t - e[i]) / left * b[i];
      if (right > 0.0) v += (e[i + ru] - t) / right * b[i + 1];
      b[i] = v;
    }
    b[e.size() - ru] = 0.0;
  }
  double acc = 0.0;
  for (std::size_t s = n; s-- > 0;) {
    acc += b[s + 1];
    out[s] = std::clamp(acc, 0.0, 1.0);
  }
}

namespace {

template <typename Fn>
BasisMatrix eval_rows(const SplineBasis& basis, std::span<const double> times, Fn fn) {
  BasisMatrix out(static_cast<Eigen::Index>(times.size()), static_cast<Eigen::Index>(basis.dim()));
  for (std::size_t r = 0; r < times.size(); ++r) {
    fn(times[r], std::span<double>(out.row(static_cast<Eigen::Index>(r)).data(), basis.dim()));
  }
  return out;
}

SplineBasis from_augmented(const AugmentedKnots& aug) {
  const auto k = static_cast<std::size_t>(aug.kappa);
  if (aug.kappa < 1 || aug.values.size() < 2 * k) {
    throw std::invalid_argument("augmented knot vector is malformed");
  }
  std::vector<double> internal(aug.values.begin() + static_cast<std::ptrdiff_t>(k),
                               aug.values.end() - static_cast<std::ptrdiff_t>(k));
  return SplineBasis(KnotVector(aug.values.front(), std::move(internal), aug.values.back()),
                     aug.kappa);
}

}  // namespace

BasisMatrix SplineBasis::eval_mspline(std::span<const double> times) const {
  return eval_rows(*this, times, [this](double t, std::span<double> row) { mspline(t, row); });
}

BasisMatrix SplineBasis::eval_ispline(std::span<const double> times) const {
  return eval_rows(*this, times, [this](double t, std::span<double> row) { ispline(t, row); });
}

BasisMatrix SplineBasis::eval_mspline_deriv(std::span<const double> times) const {
  return eval_rows(*this, times,
                   [this](double t, std::span<double> row) { mspline_deriv(t, row); });
}

BasisMatrix eval_mspline(const AugmentedKnots& aug, std::span<const double> times) {
  return from_augmented(aug).eval_mspline(times);
}

BasisMatrix eval_ispline(const AugmentedKnots& aug, std::span<const double> times) {
  return from_augmented(aug).eval_ispline(times);
}

BasisMatrix eval_mspline_derivative_wrt_time(const AugmentedKnots& aug,
                                             std::span<const double> times) {
  return from_augmented(aug).eval_mspline_deriv(times);
}

std::shared_ptr<const BasisCache::Entry> BasisCache::get(const KnotVector& knots, int kappa,
                                                         std::span<const double> times) {
  Key key{knots, kappa, std::vector<double>(times.begin(), times.end())};
  {
    std::lock_guard lock(mutex_);
    if (auto it = entries_.find(key); it != entries_.end()) return it->second;
  }
  SplineBasis basis(knots, kappa);
  auto entry = std::make_shared<Entry>(Entry{basis.eval_mspline(times), basis.eval_ispline(times)});
  std::lock_guard lock(mutex_);
  auto [it, inserted] = entries_.emplace(std::move(key), std::move(entry));
  return it->second;
}

std::size_t BasisCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

void BasisCache::clear() {
  std::lock_guard lock(mutex_);
  entries_.clear();
}

}  // namespace survnma
