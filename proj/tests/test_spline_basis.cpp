#include "doctest.h"

#include <random>
#include <thread>

#include "survnma/spline_basis.hpp"
#include "test_support.hpp"

using namespace survnma;
using survnma::testing::integrate;
using survnma::testing::random_knots;

namespace {

// Direct transcription of the M-spline recursion with half-open indicators.
double naive_mspline(const std::vector<double>& z, int r, std::size_t s, double t) {
  if (r == 1) return (z[s] <= t && t < z[s + 1]) ? 1.0 / (z[s + 1] - z[s]) : 0.0;
  const auto ru = static_cast<std::size_t>(r);
  const double denom = (r - 1) * (z[s + ru] - z[s]);
  if (denom <= 0.0) return 0.0;
  return r * ((t - z[s]) * naive_mspline(z, r - 1, s, t) +
              (z[s + ru] - t) * naive_mspline(z, r - 1, s + 1, t)) /
         denom;
}

std::vector<double> row(const BasisMatrix& m, Eigen::Index r) {
  return std::vector<double>(m.row(r).data(), m.row(r).data() + m.cols());
}

}  // namespace

TEST_CASE("augment_knots pads boundaries kappa times") {
  const KnotVector k(0.0, {1.0}, 2.0);
  CHECK(augment_knots(k, 1).values == std::vector<double>{0, 1, 2});
  CHECK(augment_knots(k, 4).values == std::vector<double>{0, 0, 0, 0, 1, 2, 2, 2, 2});
  CHECK(augment_knots(KnotVector(0.0, {}, 1.0), 2).values == std::vector<double>{0, 0, 1, 1});
  CHECK(augment_knots(k, 4).basis_dim() == 5);
}

TEST_CASE("augment_knots rejects bad input") {
  CHECK_THROWS_AS(augment_knots(KnotVector(0.0, {1.0}, 2.0), 0), std::invalid_argument);
  CHECK_THROWS_AS(augment_knots(KnotVector(0.0, {1.0, 1.0}, 2.0), 2), std::invalid_argument);
  CHECK_THROWS_AS(augment_knots(KnotVector(0.0, {3.0}, 2.0), 2), std::invalid_argument);
  CHECK_THROWS_AS(augment_knots(KnotVector(-1.0, {0.5}, 2.0), 2), std::invalid_argument);
}

TEST_CASE("order-1 M-spline is the normalised indicator") {
  const auto aug = augment_knots(KnotVector(0.0, {1.0}, 2.0), 1);
  const std::vector<double> t{0.5, 1.5};
  const auto m = eval_mspline(aug, t);
  CHECK(row(m, 0) == std::vector<double>{1.0, 0.0});
  CHECK(row(m, 1) == std::vector<double>{0.0, 1.0});
}

TEST_CASE("iterative recursion is bit-identical to the naive definition") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int rep = 0; rep < 60; ++rep) {
    const int kappa = 1 + rep % 4;
    const auto knots = random_knots(rng, rep % 7);
    const SplineBasis basis(knots, kappa);
    const auto& z = basis.augmented().values;
    std::vector<double> out(basis.dim());
    for (int i = 0; i < 25; ++i) {
      const double t = knots.lower + unif(rng) * knots.width() * 0.999999;
      basis.mspline(t, out);
      for (std::size_t s = 0; s < basis.dim(); ++s) {
        CHECK(out[s] == naive_mspline(z, kappa, s, t));
      }
    }
    // Knot locations themselves.
    for (double t : knots.internal) {
      basis.mspline(t, out);
      for (std::size_t s = 0; s < basis.dim(); ++s) CHECK(out[s] == naive_mspline(z, kappa, s, t));
    }
  }
}

TEST_CASE("upper boundary returns the left limit") {
  const SplineBasis basis(KnotVector(0.0, {0.3, 0.6}, 1.0), 3);
  std::vector<double> at(basis.dim()), near(basis.dim());
  basis.mspline(1.0, at);
  basis.mspline(1.0 - 1e-10, near);
  for (std::size_t s = 0; s < basis.dim(); ++s) CHECK(at[s] == doctest::Approx(near[s]).epsilon(1e-8));
  CHECK(at.back() > 0.0);
}

TEST_CASE("M-spline basis integrates to one") {
  std::mt19937_64 rng(3);
  std::exponential_distribution<double> expo;
  for (int rep = 0; rep < 20; ++rep) {
    const int kappa = 1 + rep % 4;
    const auto knots = random_knots(rng, rep % 6);
    const SplineBasis basis(knots, kappa);
    std::vector<double> buf(basis.dim());
    std::vector<double> alpha(basis.dim());
    double norm = 0.0;
    for (auto& a : alpha) norm += (a = expo(rng));
    for (auto& a : alpha) a /= norm;
    const double total = integrate(
        [&](double t) {
          basis.mspline(t, buf);
          double s = 0.0;
          for (std::size_t i = 0; i < buf.size(); ++i) s += alpha[i] * buf[i];
          return s;
        },
        knots.all());
    CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
    // Each column integrates to one on its own.
    for (std::size_t s = 0; s < basis.dim(); ++s) {
      const double col = integrate(
          [&](double t) {
            basis.mspline(t, buf);
            return buf[s];
          },
          knots.all());
      CHECK(col == doctest::Approx(1.0).epsilon(1e-10));
    }
  }
}

TEST_CASE("I-spline matches adaptive quadrature of the M-spline") {
  const KnotVector knots(0.0, {0.25, 0.5, 0.75}, 1.0);
  const SplineBasis basis(knots, 4);
  const std::vector<double> t{0.4};
  const auto ispl = basis.eval_ispline(t);
  std::vector<double> buf(basis.dim());
  for (std::size_t s = 0; s < basis.dim(); ++s) {
    const double q = integrate(
        [&](double u) {
          basis.mspline(u, buf);
          return buf[s];
        },
        {0.0, 0.25, 0.4});
    CHECK(std::abs(ispl(0, static_cast<Eigen::Index>(s)) - q) <= 1e-8);
  }
}

TEST_CASE("I-spline boundary rows") {
  std::mt19937_64 rng(5);
  for (int kappa = 1; kappa <= 4; ++kappa) {
    const auto knots = random_knots(rng, 3);
    const SplineBasis basis(knots, kappa);
    const std::vector<double> t{knots.lower, knots.upper};
    const auto i = basis.eval_ispline(t);
    CHECK(i.row(0).cwiseAbs().maxCoeff() == 0.0);
    CHECK((i.row(1).array() == 1.0).all());
  }
}

TEST_CASE("time derivative of the M-spline") {
  SUBCASE("order 1 is piecewise constant") {
    const SplineBasis basis(KnotVector(0.0, {0.4}, 1.0), 1);
    const std::vector<double> t{0.1, 0.7};
    CHECK(basis.eval_mspline_deriv(t).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("order 2 on a single interval has slopes -+2/width^2") {
    const double width = 3.0;
    const SplineBasis basis(KnotVector(1.0, {}, 1.0 + width), 2);
    const std::vector<double> t{1.0 + width / 2};
    const auto d = basis.eval_mspline_deriv(t);
    CHECK(d(0, 0) == doctest::Approx(-2.0 / (width * width)));
    CHECK(d(0, 1) == doctest::Approx(2.0 / (width * width)));
  }
  SUBCASE("order 4 agrees with central differences") {
    const SplineBasis basis(KnotVector(0.0, {0.2, 0.45, 0.7}, 1.0), 4);
    std::vector<double> buf(basis.dim()), d(basis.dim());
    for (double t : {0.1, 0.33, 0.5, 0.81}) {
      basis.mspline_deriv(t, d);
      for (std::size_t s = 0; s < basis.dim(); ++s) {
        const double fd = testing::central_diff(
            [&](double u) {
              basis.mspline(u, buf);
              return buf[s];
            },
            t, 1e-6);
        CHECK(testing::rel_err(d[s], fd, 1e-3) <= 1e-4);
      }
    }
  }
}

TEST_CASE("times outside the boundary interval are rejected") {
  const SplineBasis basis(KnotVector(0.0, {1.0}, 2.0), 3);
  std::vector<double> buf(basis.dim());
  CHECK_THROWS_AS(basis.mspline(2.1, buf), std::out_of_range);
  CHECK_THROWS_AS(basis.ispline(-0.1, buf), std::out_of_range);
  CHECK_NOTHROW(basis.mspline(2.0 + 1e-13, buf));
}

TEST_CASE("basis cache is transparent and shareable across threads") {
  BasisCache cache;
  const KnotVector knots(0.0, {0.5, 1.2}, 3.0);
  const std::vector<double> grid{0.0, 0.3, 1.0, 2.9, 3.0};
  const SplineBasis basis(knots, 4);
  const auto direct_m = basis.eval_mspline(grid);
  const auto direct_i = basis.eval_ispline(grid);

  std::vector<std::shared_ptr<const BasisCache::Entry>> results(4);
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < results.size(); ++w) {
    workers.emplace_back([&, w] { results[w] = cache.get(knots, 4, grid); });
  }
  for (auto& t : workers) t.join();
  CHECK(cache.size() == 1);
  for (const auto& r : results) {
    CHECK(r->m == direct_m);
    CHECK(r->i == direct_i);
  }
}
