#include "doctest.h"

#include <numbers>
#include <random>

#include "survnma/coefficient_priors.hpp"
#include "survnma/stats.hpp"
#include "test_support.hpp"

using namespace survnma;
using survnma::testing::random_knots;
using survnma::testing::rel_err;

namespace {

std::span<const double> view(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace

TEST_CASE("softmax closed forms") {
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(3);
  const auto u = softmax(view(zero));
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(u[i] == doctest::Approx(0.25));

  const Eigen::VectorXd one = Eigen::VectorXd::Constant(1, std::log(2.0));
  const auto a = softmax(view(one));
  CHECK(a[0] == doctest::Approx(1.0 / 3));
  CHECK(a[1] == doctest::Approx(2.0 / 3));

  Eigen::VectorXd big(2);
  big << 700.0, -700.0;
  const auto b = softmax(view(big));
  CHECK(b.allFinite());
  CHECK(b.sum() == doctest::Approx(1.0));
  CHECK(b[1] == doctest::Approx(1.0));

  Eigen::VectorXd bad(1);
  bad << std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(softmax(view(bad)), std::invalid_argument);
}

TEST_CASE("inverse softmax") {
  const Eigen::VectorXd uniform = Eigen::VectorXd::Constant(5, 0.2);
  CHECK(inverse_softmax(view(uniform)).cwiseAbs().maxCoeff() < 1e-15);
  Eigen::VectorXd third(2);
  third << 1.0 / 3, 2.0 / 3;
  CHECK(inverse_softmax(view(third))[0] == doctest::Approx(std::log(2.0)));
  Eigen::VectorXd zero(2);
  zero << 0.0, 1.0;
  CHECK_THROWS_AS(inverse_softmax(view(zero)), std::invalid_argument);
}

TEST_CASE("softmax round trip on random simplex points") {
  std::mt19937_64 rng(17);
  std::exponential_distribution<double> expo;
  for (int rep = 0; rep < 200; ++rep) {
    const int n = 2 + rep % 12;
    Eigen::VectorXd a(n);
    for (int i = 0; i < n; ++i) a[i] = expo(rng) + 1e-8;
    a /= a.sum();
    const Eigen::VectorXd back = softmax(view(inverse_softmax(view(a))));
    for (int i = 0; i < n; ++i) CHECK(rel_err(back[i], a[i], 0.0) <= 1e-10);
  }
}

TEST_CASE("constant hazard prior mean") {
  auto check_constant = [](const KnotVector& knots, int kappa) {
    const SplineBasis basis(knots, kappa);
    const auto alpha = softmax(view(constant_hazard_phi(knots, kappa)));
    std::vector<double> grid;
    for (int i = 0; i <= 400; ++i) grid.push_back(knots.lower + knots.width() * i / 400.0);
    const Eigen::VectorXd h = basis.eval_mspline(grid) * alpha;
    for (Eigen::Index i = 0; i < h.size(); ++i) {
      CHECK(std::abs(h[i] - 1.0 / knots.width()) <= 1e-8);
    }
  };
  SUBCASE("evenly spaced cubic") { check_constant(KnotVector(0.0, {1, 2, 3, 4, 5}, 6.0), 4); }
  SUBCASE("clustered cubic") {
    check_constant(KnotVector(0.0, {0.05, 0.1, 0.2, 0.35, 0.6}, 3.0), 4);
  }
  SUBCASE("orders 2 and 3") {
    check_constant(KnotVector(0.5, {0.9, 2.0}, 4.0), 2);
    check_constant(KnotVector(0.5, {0.9, 2.0}, 4.0), 3);
  }
  SUBCASE("piecewise exponential uses gap fractions") {
    const KnotVector knots(0.0, {0.1, 0.5}, 1.0);
    const auto a = constant_hazard_coefficients(knots, 1);
    CHECK(a[0] == doctest::Approx(0.1));
    CHECK(a[1] == doctest::Approx(0.4));
    CHECK(a[2] == doctest::Approx(0.5));
    check_constant(knots, 1);
  }
}

TEST_CASE("random walk weights") {
  const KnotVector even(0.0, {1, 2, 3}, 4.0);
  const auto w = rw_weights(even, 4);
  const std::vector<double> expect{1, 2, 3, 3, 2, 1};
  REQUIRE(w.size() == 6);
  for (int i = 0; i < 6; ++i) CHECK(w[i] == doctest::Approx(expect[static_cast<std::size_t>(i)] / 12.0));
  CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-12));

  KnotVector days = even;
  for (auto& k : days.internal) k *= 7.0;
  days.upper *= 7.0;
  CHECK((rw_weights(days, 4) - w).cwiseAbs().maxCoeff() < 1e-15);

  CHECK_THROWS_AS(rw_weights(even, 1), std::invalid_argument);
}

TEST_CASE("piecewise exponential weights") {
  const auto w1 = pexp_weights(KnotVector(0.0, {1.0}, 2.0));
  REQUIRE(w1.size() == 1);
  CHECK(w1[0] == doctest::Approx(1.0));
  const auto w2 = pexp_weights(KnotVector(0.0, {0.1, 0.5}, 1.0));
  CHECK(w2[0] == doctest::Approx(0.2));
  CHECK(w2[1] == doctest::Approx(0.8));
  const auto w3 = pexp_weights(KnotVector(0.0, {0.7, 3.5}, 7.0));
  CHECK((w3 - w2).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("weights sum to one on random knots") {
  std::mt19937_64 rng(23);
  for (int rep = 0; rep < 100; ++rep) {
    const auto knots = random_knots(rng, 1 + rep % 10);
    const int kappa = 1 + rep % 4;
    CHECK(std::abs(prior_weights(knots, kappa).sum() - 1.0) <= 1e-12);
  }
}

TEST_CASE("weighted random walk log density") {
  const KnotVector knots(0.0, {0.3, 0.7, 1.6}, 3.0);
  auto prior = RandomWalkPrior::for_knots(knots, 4, 0.8);
  const auto n = prior.phi.size();

  SUBCASE("zero increments") {
    const auto at_phi = logprior_rw(view(prior.phi), prior);
    double expect = 0.0;
    for (Eigen::Index l = 0; l < n; ++l) {
      expect += stats::normal_lpdf(0.0, prior.sigma * std::sqrt(prior.weights[l]));
    }
    CHECK(at_phi.value == doctest::Approx(expect).epsilon(1e-12));
    auto doubled = prior;
    doubled.sigma *= 2.0;
    CHECK(logprior_rw(view(prior.phi), doubled).value - at_phi.value ==
          doctest::Approx(-static_cast<double>(n) * std::numbers::ln2));
  }

  SUBCASE("gradient matches finite differences") {
    std::mt19937_64 rng(29);
    std::normal_distribution<double> norm;
    for (int rep = 0; rep < 100; ++rep) {
      Eigen::VectorXd x(n);
      for (Eigen::Index i = 0; i < n; ++i) x[i] = prior.phi[i] + norm(rng);
      prior.sigma = 0.2 + std::abs(norm(rng));
      const auto ld = logprior_rw(view(x), prior);
      const double h = 1e-5;
      for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const double fd = (logprior_rw(view(xp), prior).value - logprior_rw(view(xm), prior).value) / (2 * h);
        CHECK(rel_err(ld.grad[i], fd, 1e-3) <= 1e-6);
      }
      auto sp = prior, sm = prior;
      sp.sigma += h;
      sm.sigma -= h;
      const double fds = (logprior_rw(view(x), sp).value - logprior_rw(view(x), sm).value) / (2 * h);
      CHECK(rel_err(ld.grad_sigma, fds, 1e-3) <= 1e-6);
    }
  }

  SUBCASE("invariant to timescale") {
    KnotVector weeks = knots;
    for (auto& k : weeks.internal) k *= 7.0;
    weeks.upper *= 7.0;
    const auto p2 = RandomWalkPrior::for_knots(weeks, 4, 0.8);
    Eigen::VectorXd x = prior.phi + Eigen::VectorXd::LinSpaced(n, -0.5, 0.7);
    Eigen::VectorXd x2 = p2.phi + Eigen::VectorXd::LinSpaced(n, -0.5, 0.7);
    CHECK(logprior_rw(view(x), prior).value == doctest::Approx(logprior_rw(view(x2), p2).value));
  }

  SUBCASE("sigma must be positive") {
    prior.sigma = 0.0;
    CHECK_THROWS_AS(logprior_rw(view(prior.phi), prior), std::invalid_argument);
  }
}

TEST_CASE("non-proportionality prior") {
  NonPropPrior prior;
  prior.num_treatments = 3;
  prior.weights = rw_weights(KnotVector(0.0, {0.4, 1.1}, 2.0), 3);
  prior.sigma = 0.7;
  const auto n = prior.weights.size();

  SUBCASE("all zero") {
    const auto ld = logprior_nonprop(Eigen::MatrixXd::Zero(n, 3), prior);
    const Eigen::MatrixXd p = prior.correlation();
    double expect = 0.0;
    for (Eigen::Index l = 0; l < n; ++l) {
      const Eigen::MatrixXd cov = prior.weights[l] * prior.sigma * prior.sigma * p;
      expect += -3 * stats::kLogSqrt2Pi - 0.5 * std::log(cov.determinant());
    }
    CHECK(ld.value == doctest::Approx(expect).epsilon(1e-12));
    CHECK(ld.grad.cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("two treatments match a direct bivariate normal") {
    NonPropPrior two = prior;
    two.num_treatments = 2;
    Eigen::MatrixXd g(n, 2);
    g << 0.3, -0.2, 0.1, 0.5, -0.4, 0.9, 0.2, 0.0;
    double expect = 0.0;
    Eigen::Vector2d prev = Eigen::Vector2d::Zero();
    for (Eigen::Index l = 0; l < n; ++l) {
      const Eigen::Vector2d v = g.row(l).transpose() - prev;
      prev = g.row(l).transpose();
      const double var = two.weights[l] * two.sigma * two.sigma;
      Eigen::Matrix2d cov;
      cov << var, 0.5 * var, 0.5 * var, var;
      expect += -2 * stats::kLogSqrt2Pi - 0.5 * std::log(cov.determinant()) -
                0.5 * v.dot(cov.inverse() * v);
    }
    CHECK(logprior_nonprop(g, two).value == doctest::Approx(expect).epsilon(1e-12));
  }

  SUBCASE("gradient matches finite differences") {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> norm;
    for (int rep = 0; rep < 100; ++rep) {
      Eigen::MatrixXd g(n, 3);
      for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = norm(rng);
      prior.sigma = 0.3 + std::abs(norm(rng));
      const auto ld = logprior_nonprop(g, prior);
      const double h = 1e-5;
      for (Eigen::Index i = 0; i < g.size(); ++i) {
        Eigen::MatrixXd gp = g, gm = g;
        gp.data()[i] += h;
        gm.data()[i] -= h;
        const double fd = (logprior_nonprop(gp, prior).value - logprior_nonprop(gm, prior).value) / (2 * h);
        CHECK(rel_err(ld.grad[i], fd, 1e-3) <= 1e-6);
      }
      auto sp = prior, sm = prior;
      sp.sigma += h;
      sm.sigma -= h;
      const double fds = (logprior_nonprop(g, sp).value - logprior_nonprop(g, sm).value) / (2 * h);
      CHECK(rel_err(ld.grad_sigma, fds, 1e-3) <= 1e-6);
    }
  }

  SUBCASE("shared-component draws have correlation one half") {
    auto rng = make_rng(99);
    NonPropPrior single = prior;
    single.weights = Eigen::VectorXd::Ones(1);
    single.sigma = 1.0;
    const int draws = 40000;
    Eigen::MatrixXd v(draws, 3);
    for (int d = 0; d < draws; ++d) v.row(d) = sample_nonprop_effects(single, rng).row(0);
    const Eigen::MatrixXd centred = v.rowwise() - v.colwise().mean();
    const Eigen::MatrixXd cov = centred.transpose() * centred / (draws - 1);
    CHECK(cov(0, 0) == doctest::Approx(1.0).epsilon(0.03));
    CHECK(cov(0, 1) / std::sqrt(cov(0, 0) * cov(1, 1)) == doctest::Approx(0.5).epsilon(0.04));
  }
}

TEST_CASE("prior hazard ribbons are ordered and deterministic") {
  const SplineBasis basis(KnotVector(0.0, {0.2, 0.4, 0.6, 0.8}, 1.0), 4);
  std::vector<double> grid;
  for (int i = 0; i <= 50; ++i) grid.push_back(i / 50.0);
  for (auto v : {PriorVariant::Dirichlet, PriorVariant::RandomEffect, PriorVariant::RandomWalk,
                 PriorVariant::WeightedRandomWalk}) {
    auto rng1 = make_rng(7);
    auto rng2 = make_rng(7);
    const auto r1 = sample_prior_hazard(v, basis, grid, 1000, 1.0, rng1);
    const auto r2 = sample_prior_hazard(v, basis, grid, 1000, 1.0, rng2);
    CHECK(r1.values == r2.values);
    for (Eigen::Index g = 0; g < r1.values.rows(); ++g) {
      for (Eigen::Index q = 1; q < r1.values.cols(); ++q) {
        CHECK(r1.values(g, q) >= r1.values(g, q - 1));
      }
    }
  }
  CHECK(prior_variant_from_string("weighted_random_walk") == PriorVariant::WeightedRandomWalk);
}
