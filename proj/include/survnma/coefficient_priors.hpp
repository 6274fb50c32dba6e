#pragma once

// Softmax parameterisation of spline coefficients and the shrinkage priors
// placed on the inverse-softmax scale.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "survnma/spline_basis.hpp"

namespace survnma {

using Rng = std::mt19937_64;

/// Independent generator for (seed, stream); streams never share state.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

/// Maps x (length n-1) to the simplex (length n) with the first category pinned
/// to a zero logit.
Eigen::VectorXd softmax(std::span<const double> x);
/// log(a[1:]) - log(a[0]). Throws on non-positive entries.
Eigen::VectorXd inverse_softmax(std::span<const double> a);

/// Simplex coefficients giving a constant hazard 1/(upper - lower):
/// (z*_{s+kappa} - z*_s) / (kappa (upper - lower)). For kappa = 1 these are the
/// knot-gap fractions.
Eigen::VectorXd constant_hazard_coefficients(const KnotVector& knots, int kappa);
/// inverse_softmax of constant_hazard_coefficients: the random-walk prior mean.
Eigen::VectorXd constant_hazard_phi(const KnotVector& knots, int kappa);

/// Random-walk variance weights from knot spacing, kappa >= 2. Sum to 1.
Eigen::VectorXd rw_weights(const KnotVector& knots, int kappa);
/// Piecewise-exponential (kappa = 1) weights. Sum to 1.
Eigen::VectorXd pexp_weights(const KnotVector& knots);
/// rw_weights or pexp_weights depending on kappa.
Eigen::VectorXd prior_weights(const KnotVector& knots, int kappa);

struct RandomWalkPrior {
  Eigen::VectorXd phi;
  Eigen::VectorXd weights;
  double sigma = 1.0;

  static RandomWalkPrior for_knots(const KnotVector& knots, int kappa, double sigma = 1.0);
};

struct NonPropPrior {
  double sigma = 1.0;
  int num_treatments = 2;
  Eigen::VectorXd weights;

  /// K x K, unit diagonal and 0.5 off the diagonal.
  Eigen::MatrixXd correlation() const;
};

struct LogDensity {
  double value = 0.0;
  Eigen::VectorXd grad;    // w.r.t. the coefficient argument (flattened)
  double grad_sigma = 0.0; // w.r.t. the smoothing SD
};

/// Centred density of alpha_star under the weighted random walk around phi.
LogDensity logprior_rw(std::span<const double> alpha_star, const RandomWalkPrior& prior);

/// Density of non-proportionality effects under the symmetric multivariate
/// random walk. gammas is (L + kappa - 1) x K, column k holding treatment k;
/// the gradient is flattened column-major.
LogDensity logprior_nonprop(const Eigen::MatrixXd& gammas, const NonPropPrior& prior);

/// Draws increments (L + kappa - 1) x K with unit-correlation-0.5 structure:
/// v_k = sigma sqrt(w) (z_k + z_0) / sqrt(2).
Eigen::MatrixXd sample_nonprop_effects(const NonPropPrior& prior, Rng& rng);

enum class PriorVariant { Dirichlet, RandomEffect, RandomWalk, WeightedRandomWalk };

const char* to_string(PriorVariant v);
PriorVariant prior_variant_from_string(const std::string& name);

/// Baseline hazard draws (n_draws x grid) implied by a coefficient prior with
/// sigma ~ half-Normal(0, sigma_scale^2).
Eigen::MatrixXd sample_prior_hazard_draws(PriorVariant variant, const SplineBasis& basis,
                                          std::span<const double> grid, int n_draws,
                                          double sigma_scale, Rng& rng);

inline const std::vector<double> kRibbonLevels{0.025, 0.1, 0.25, 0.5, 0.75, 0.9, 0.975};

struct QuantileRibbons {
  std::vector<double> grid;
  std::vector<double> levels;
  Eigen::MatrixXd values;  // grid x levels
};

/// Pointwise quantiles (type 7) of each column of draws.
QuantileRibbons pointwise_ribbons(const Eigen::MatrixXd& draws, std::span<const double> grid,
                                  const std::vector<double>& levels = kRibbonLevels);

/// 50/80/95% ribbons of the prior baseline hazard.
QuantileRibbons sample_prior_hazard(PriorVariant variant, const SplineBasis& basis,
                                    std::span<const double> grid, int n_draws,
                                    double sigma_scale, Rng& rng);

}  // namespace survnma
