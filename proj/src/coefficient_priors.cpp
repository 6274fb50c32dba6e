#include "survnma/coefficient_priors.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "survnma/stats.hpp"

namespace survnma {

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x5eedu};
  return Rng(seq);
}

Eigen::VectorXd softmax(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) {
    if (!std::isfinite(v)) throw std::invalid_argument("softmax: non-finite input");
    m = std::max(m, v);
  }
  Eigen::VectorXd out(static_cast<Eigen::Index>(x.size() + 1));
  out[0] = std::exp(-m);
  double total = out[0];
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[static_cast<Eigen::Index>(i + 1)] = std::exp(x[i] - m);
    total += out[static_cast<Eigen::Index>(i + 1)];
  }
  return out / total;
}

Eigen::VectorXd inverse_softmax(std::span<const double> a) {
  if (a.empty()) throw std::invalid_argument("inverse_softmax: empty simplex");
  for (double v : a) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument("inverse_softmax: entries must be strictly positive");
    }
  }
  Eigen::VectorXd out(static_cast<Eigen::Index>(a.size() - 1));
  const double base = std::log(a[0]);
  for (std::size_t i = 1; i < a.size(); ++i) {
    out[static_cast<Eigen::Index>(i - 1)] = std::log(a[i]) - base;
  }
  return out;
}

Eigen::VectorXd constant_hazard_coefficients(const KnotVector& knots, int kappa) {
  const auto aug = augment_knots(knots, kappa);
  const auto& z = aug.values;
  const auto k = static_cast<std::size_t>(kappa);
  const double scale = kappa * knots.width();
  Eigen::VectorXd a(static_cast<Eigen::Index>(aug.basis_dim()));
  for (std::size_t s = 0; s < aug.basis_dim(); ++s) {
    a[static_cast<Eigen::Index>(s)] = (z[s + k] - z[s]) / scale;
  }
  return a;
}

Eigen::VectorXd constant_hazard_phi(const KnotVector& knots, int kappa) {
  const Eigen::VectorXd a = constant_hazard_coefficients(knots, kappa);
  return inverse_softmax(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())));
}

Eigen::VectorXd rw_weights(const KnotVector& knots, int kappa) {
  if (kappa < 2) {
    throw std::invalid_argument(
        "rw_weights: kappa = 1 gives zero-over-zero weights; use pexp_weights");
  }
  const auto aug = augment_knots(knots, kappa);
  const auto& z = aug.values;
  const auto k = static_cast<std::size_t>(kappa);
  const std::size_t n = aug.basis_dim() - 1;
  const double scale = (kappa - 1) * knots.width();
  Eigen::VectorXd w(static_cast<Eigen::Index>(n));
  for (std::size_t l = 1; l <= n; ++l) {
    w[static_cast<Eigen::Index>(l - 1)] = (z[l + k - 1] - z[l]) / scale;
  }
  return w;
}

Eigen::VectorXd pexp_weights(const KnotVector& knots) {
  knots.validate();
  const auto all = knots.all();
  const std::size_t n = knots.internal.size();
  Eigen::VectorXd w(static_cast<Eigen::Index>(n));
  if (n == 0) return w;
  const double scale = all[n] - all[0];
  for (std::size_t l = 0; l < n; ++l) {
    w[static_cast<Eigen::Index>(l)] = (all[l + 1] - all[l]) / scale;
  }
  return w;
}

Eigen::VectorXd prior_weights(const KnotVector& knots, int kappa) {
  return kappa == 1 ? pexp_weights(knots) : rw_weights(knots, kappa);
}

RandomWalkPrior RandomWalkPrior::for_knots(const KnotVector& knots, int kappa, double sigma) {
  return {constant_hazard_phi(knots, kappa), prior_weights(knots, kappa), sigma};
}

Eigen::MatrixXd NonPropPrior::correlation() const {
  Eigen::MatrixXd p = Eigen::MatrixXd::Constant(num_treatments, num_treatments, 0.5);
  p.diagonal().setOnes();
  return p;
}

LogDensity logprior_rw(std::span<const double> alpha_star, const RandomWalkPrior& prior) {
  const auto n = static_cast<Eigen::Index>(alpha_star.size());
  if (prior.phi.size() != n || prior.weights.size() != n) {
    throw std::invalid_argument("logprior_rw: dimension mismatch");
  }
  if (!(prior.sigma > 0.0)) throw std::invalid_argument("logprior_rw: sigma must be > 0");
  const double s2 = prior.sigma * prior.sigma;
  LogDensity out;
  out.grad = Eigen::VectorXd::Zero(n);
  double prev = 0.0;
  for (Eigen::Index l = 0; l < n; ++l) {
    const double dev = alpha_star[static_cast<std::size_t>(l)] - prior.phi[l];
    const double u = dev - prev;
    prev = dev;
    const double var = s2 * prior.weights[l];
    out.value += -stats::kLogSqrt2Pi - 0.5 * std::log(var) - 0.5 * u * u / var;
    out.grad[l] -= u / var;
    if (l > 0) out.grad[l - 1] += u / var;
    out.grad_sigma += -1.0 / prior.sigma + u * u / (var * prior.sigma);
  }
  return out;
}

LogDensity logprior_nonprop(const Eigen::MatrixXd& gammas, const NonPropPrior& prior) {
  const Eigen::Index n = gammas.rows();
  const Eigen::Index k = gammas.cols();
  if (k != prior.num_treatments || prior.weights.size() != n) {
    throw std::invalid_argument("logprior_nonprop: dimension mismatch");
  }
  if (!(prior.sigma > 0.0)) throw std::invalid_argument("logprior_nonprop: sigma must be > 0");
  const double kd = static_cast<double>(k);
  // P = (I + J) / 2: P^{-1} = 2 (I - J / (K + 1)), det P = (K + 1) / 2^K.
  const double log_det_p = std::log(kd + 1.0) - kd * std::numbers::ln2;
  const double s2 = prior.sigma * prior.sigma;
  LogDensity out;
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(n, k);
  Eigen::VectorXd prev = Eigen::VectorXd::Zero(k);
  for (Eigen::Index l = 0; l < n; ++l) {
    const Eigen::VectorXd v = gammas.row(l).transpose() - prev;
    prev = gammas.row(l).transpose();
    const double scale = prior.weights[l] * s2;
    const double total = v.sum();
    const double quad = 2.0 * (v.squaredNorm() - total * total / (kd + 1.0)) / scale;
    out.value += -kd * stats::kLogSqrt2Pi - 0.5 * (kd * std::log(scale) + log_det_p) - 0.5 * quad;
    const Eigen::VectorXd gv =
        -(2.0 / scale) * (v - Eigen::VectorXd::Constant(k, total / (kd + 1.0)));
    grad.row(l) += gv.transpose();
    if (l > 0) grad.row(l - 1) -= gv.transpose();
    out.grad_sigma += -kd / prior.sigma + quad / prior.sigma;
  }
  out.grad = Eigen::Map<Eigen::VectorXd>(grad.data(), grad.size());
  return out;
}

Eigen::MatrixXd sample_nonprop_effects(const NonPropPrior& prior, Rng& rng) {
  std::normal_distribution<double> norm;
  const Eigen::Index n = prior.weights.size();
  const Eigen::Index k = prior.num_treatments;
  Eigen::MatrixXd gamma(n, k);
  Eigen::VectorXd level = Eigen::VectorXd::Zero(k);
  for (Eigen::Index l = 0; l < n; ++l) {
    const double shared = norm(rng);
    const double scale = prior.sigma * std::sqrt(prior.weights[l]) / std::numbers::sqrt2;
    for (Eigen::Index j = 0; j < k; ++j) level[j] += scale * (norm(rng) + shared);
    gamma.row(l) = level.transpose();
  }
  return gamma;
}

const char* to_string(PriorVariant v) {
  switch (v) {
    case PriorVariant::Dirichlet: return "dirichlet";
    case PriorVariant::RandomEffect: return "random_effect";
    case PriorVariant::RandomWalk: return "random_walk";
    case PriorVariant::WeightedRandomWalk: return "weighted_random_walk";
  }
  return "?";
}

PriorVariant prior_variant_from_string(const std::string& name) {
  for (auto v : {PriorVariant::Dirichlet, PriorVariant::RandomEffect, PriorVariant::RandomWalk,
                 PriorVariant::WeightedRandomWalk}) {
    if (name == to_string(v)) return v;
  }
  throw std::invalid_argument("unknown prior variant: " + name);
}

Eigen::MatrixXd sample_prior_hazard_draws(PriorVariant variant, const SplineBasis& basis,
                                          std::span<const double> grid, int n_draws,
                                          double sigma_scale, Rng& rng) {
  const BasisMatrix m = basis.eval_mspline(grid);
  const auto dim = static_cast<Eigen::Index>(basis.dim());
  const Eigen::VectorXd phi = constant_hazard_phi(basis.knots(), basis.order());
  const Eigen::VectorXd w = prior_weights(basis.knots(), basis.order());
  std::normal_distribution<double> norm;
  std::exponential_distribution<double> expo(1.0);

  Eigen::MatrixXd out(n_draws, static_cast<Eigen::Index>(grid.size()));
  Eigen::VectorXd alpha(dim);
  Eigen::VectorXd star(dim - 1);
  for (int d = 0; d < n_draws; ++d) {
    if (variant == PriorVariant::Dirichlet) {
      for (Eigen::Index s = 0; s < dim; ++s) alpha[s] = expo(rng);
      alpha /= alpha.sum();
    } else {
      const double sigma = std::abs(norm(rng)) * sigma_scale;
      double level = 0.0;
      for (Eigen::Index l = 0; l < dim - 1; ++l) {
        const double z = norm(rng);
        switch (variant) {
          case PriorVariant::RandomEffect: star[l] = phi[l] + sigma * z; break;
          case PriorVariant::RandomWalk:
            level += sigma * z;
            star[l] = phi[l] + level;
            break;
          default:
            level += sigma * std::sqrt(w[l]) * z;
            star[l] = phi[l] + level;
            break;
        }
      }
      alpha = softmax(std::span<const double>(star.data(), static_cast<std::size_t>(star.size())));
    }
    out.row(d) = (m * alpha).transpose();
  }
  return out;
}

QuantileRibbons pointwise_ribbons(const Eigen::MatrixXd& draws, std::span<const double> grid,
                                  const std::vector<double>& levels) {
  QuantileRibbons r;
  r.grid.assign(grid.begin(), grid.end());
  r.levels = levels;
  r.values.resize(draws.cols(), static_cast<Eigen::Index>(levels.size()));
  std::vector<double> col(static_cast<std::size_t>(draws.rows()));
  for (Eigen::Index c = 0; c < draws.cols(); ++c) {
    for (Eigen::Index d = 0; d < draws.rows(); ++d) col[static_cast<std::size_t>(d)] = draws(d, c);
    std::sort(col.begin(), col.end());
    for (std::size_t q = 0; q < levels.size(); ++q) {
      r.values(c, static_cast<Eigen::Index>(q)) = stats::quantile_sorted(col, levels[q]);
    }
  }
  return r;
}

QuantileRibbons sample_prior_hazard(PriorVariant variant, const SplineBasis& basis,
                                    std::span<const double> grid, int n_draws,
                                    double sigma_scale, Rng& rng) {
  return pointwise_ribbons(
      sample_prior_hazard_draws(variant, basis, grid, n_draws, sigma_scale, rng), grid);
}

}  // namespace survnma
