#pragma once

// No-U-turn Hamiltonian Monte Carlo with warmup adaptation, and the usual
// convergence diagnostics.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "survnma/coefficient_priors.hpp"
#include "survnma/nma_model.hpp"

namespace survnma {

struct SamplerConfig {
  int chains = 4;
  int warmup = 1000;
  int sampling = 1000;
  double target_accept = 0.8;
  int max_depth = 10;
  std::uint64_t seed = 1;
  double init_radius = 0.5;
  bool dense_metric = false;
  int threads = 0;             // 0: one per chain, capped by the hardware
  bool gradient_check = true;  // finite-difference self-check at the initial point

  void validate() const;
};

/// Log density with gradient. Returning a non-finite value (or throwing
/// NonFiniteError) marks the point as outside the support.
using LogDensityFn = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;

struct SamplingTarget {
  std::size_t dim = 0;
  LogDensityFn log_density;
  std::function<Eigen::VectorXd(Rng&, double)> initial_point;  // optional
  std::vector<std::string> names;                              // optional
};

/// The target defined by a model's log posterior.
SamplingTarget model_target(const NmaModel& model);

struct ChainAdaptation {
  double step_size = 0.0;
  Eigen::VectorXd inv_metric_diag;
  Eigen::MatrixXd inv_metric_dense;  // empty unless the dense metric was used
};

/// Retained draws of all chains. Row chain * iterations + i holds iteration i
/// of that chain.
struct PosteriorDraws {
  std::vector<std::string> names;
  int chains = 0;
  int iterations = 0;
  Eigen::MatrixXd draws;    // rows x dim
  Eigen::MatrixXd loglik;   // rows x records (empty for generic targets)
  Eigen::VectorXd lp;       // log density per draw
  Eigen::VectorXd accept_stat;
  Eigen::VectorXi treedepth;
  Eigen::VectorXi n_leapfrog;
  Eigen::VectorXi divergent;
  std::vector<ChainAdaptation> adaptation;
  std::vector<std::string> warnings;

  std::size_t num_draws() const { return static_cast<std::size_t>(draws.rows()); }
  Eigen::Index row(int chain, int iteration) const {
    return static_cast<Eigen::Index>(chain) * iterations + iteration;
  }
  /// Values of one parameter as an iterations x chains matrix.
  Eigen::MatrixXd chain_matrix(Eigen::Index param) const;
  int num_divergent() const { return divergent.sum(); }
};

/// Runs NUTS on a generic target. Deterministic given config.seed and
/// config.chains, whatever the thread count.
PosteriorDraws sample(const SamplingTarget& target, const SamplerConfig& config);

/// Runs NUTS on a model and stores per-draw pointwise log-likelihoods.
PosteriorDraws sample(const NmaModel& model, const SamplerConfig& config);

/// Finite-difference check of a log-density gradient. Returns the worst
/// relative error |g - fd| / max(1, |fd|) over all coordinates.
double gradient_check(const LogDensityFn& f, const Eigen::VectorXd& x, double h = 1e-6);

// --- diagnostics -----------------------------------------------------------

struct ParameterDiagnostics {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q05 = 0.0, q50 = 0.0, q95 = 0.0;
  std::optional<double> rhat;  // empty when undefined (constant chains)
  double ess_bulk = 0.0;
  double ess_tail = 0.0;
  bool flagged = false;  // rhat > 1.01 (or undefined while chains disagree)
};

struct DiagnosticsReport {
  std::vector<ParameterDiagnostics> parameters;
  int divergences = 0;
  int max_treedepth_hits = 0;
  int total_draws = 0;
  std::vector<std::string> warnings;
  int num_flagged() const;
};

/// Rank-normalised split R-hat (maximum of bulk and folded). Input is
/// iterations x chains. Empty when the within-chain variance is zero.
std::optional<double> split_rhat(const Eigen::MatrixXd& chains);
/// Bulk effective sample size (rank-normalised, split chains).
double ess_bulk(const Eigen::MatrixXd& chains);
/// Tail effective sample size: minimum over the 5% and 95% quantile indicators.
double ess_tail(const Eigen::MatrixXd& chains);
/// Effective sample size of raw values (Geyer initial monotone sequence).
double ess_basic(const Eigen::MatrixXd& chains);

/// Needs >= 2 chains and >= 100 draws per chain for R-hat; otherwise the
/// R-hat entries are empty and a warning is recorded.
DiagnosticsReport diagnostics(const PosteriorDraws& draws, int max_depth = 10);

}  // namespace survnma
