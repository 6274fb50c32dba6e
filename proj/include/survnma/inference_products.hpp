#pragma once

// Posterior summaries: survival / hazard curves with constant-hazard
// extrapolation, log hazard ratio curves, PSIS-LOO, survival-time simulation,
// and the multivariate normal export.

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "survnma/coefficient_priors.hpp"
#include "survnma/nma_model.hpp"
#include "survnma/posterior_engine.hpp"

namespace survnma {

enum class CurveQuantity { Survival, Hazard, CumulativeHazard, LogHazardRatio };

const char* to_string(CurveQuantity q);

/// Pointwise posterior summary of one curve. quantiles has one row per grid
/// time and one column per entry of levels (kRibbonLevels by default, giving
/// the median and the 50/80/95% intervals).
struct CurveEstimate {
  CurveQuantity quantity = CurveQuantity::Survival;
  std::string population;  // study label
  std::string treatment;
  std::string reference;   // log-HR curves only
  bool conditional = false;  // evaluated at explicit covariate values
  std::vector<double> time;
  std::vector<double> levels;
  Eigen::MatrixXd quantiles;
  Eigen::VectorXd mean;

  Eigen::VectorXd median() const;
};

/// 200 evenly spaced times on [0, horizon] merged with the study's knots
/// (within the horizon), sorted and de-duplicated.
std::vector<double> default_grid(const NmaModel& model, int study, double horizon, int points = 200);

struct PredictionOptions {
  /// Raw covariate values (covariate_columns() order). Defaults to the study
  /// means, in which case curves are not labelled conditional.
  std::optional<Eigen::VectorXd> covariates;
  std::vector<double> levels = kRibbonLevels;
};

/// Per-draw curves for one arm: draws x grid.
struct ArmCurves {
  Eigen::MatrixXd survival, hazard, cumhaz;
};

/// Evaluates h, H and S for every draw. Beyond the upper boundary knot the
/// hazard is held at its (left-limit) boundary value.
ArmCurves evaluate_arm(const NmaModel& model, const Eigen::MatrixXd& draws, int study, int treatment,
                       const std::vector<double>& grid, const Eigen::VectorXd& x_centred = {});

/// Survival, hazard and cumulative hazard summaries (three curves per
/// treatment, in that order). Throws for arms the family cannot predict.
std::vector<CurveEstimate> predict_curves(const NmaModel& model, const PosteriorDraws& draws,
                                          int study, const std::vector<int>& treatments,
                                          const std::vector<double>& grid,
                                          const PredictionOptions& options = {});

/// log h_k(t) - log h_ref(t) per draw, summarised per treatment.
std::vector<CurveEstimate> log_hazard_ratio_curves(const NmaModel& model, const PosteriorDraws& draws,
                                                   int study, const std::vector<int>& treatments,
                                                   int reference, const std::vector<double>& grid,
                                                   const PredictionOptions& options = {});

// --- PSIS-LOO ----------------------------------------------------------------

struct GpdFit {
  double k = 0.0;
  double sigma = 0.0;
};

/// Zhang & Stephens (2009) generalised Pareto fit to positive exceedances, with
/// the weakly informative adjustment of k towards 0.5.
GpdFit fit_generalized_pareto(std::vector<double> x);

struct PsisResult {
  Eigen::VectorXd log_weights;  // smoothed, unnormalised
  double pareto_k = 0.0;
};

/// Pareto-smoothed importance weights from log ratios. The largest 20% of the
/// weights are replaced by expected GPD order statistics.
PsisResult psis(const Eigen::VectorXd& log_ratios);

inline constexpr double kParetoKThreshold = 0.7;

struct LooStudy {
  std::string study;
  double elpd = 0.0;
  double looic = 0.0;
  double p_loo = 0.0;
  int records = 0;
};

struct LooReport {
  Eigen::VectorXd elpd_i, p_loo_i, pareto_k;
  std::vector<int> record_study;
  std::vector<LooStudy> per_study;
  double elpd = 0.0;
  double looic = 0.0;
  double p_loo = 0.0;
  double se_looic = 0.0;
  int high_k = 0;
  std::vector<std::string> warnings;
};

/// PSIS-LOO from a draws x records log-likelihood matrix.
LooReport loo(const Eigen::MatrixXd& loglik, const std::vector<int>& record_study,
              const std::vector<std::string>& study_labels);
LooReport loo(const PosteriorDraws& draws, const SurvivalDataset& data);

/// Log pointwise predictive density of held-out records, log mean_s exp(ll_s),
/// per column of loglik.
Eigen::VectorXd log_predictive_density(const Eigen::MatrixXd& loglik);

/// Table A.1 layout: rows are studies, "Total" and "p_loo"; one column per model.
struct LooTable {
  std::vector<std::string> models;
  std::vector<std::string> rows;
  Eigen::MatrixXd values;  // rows x models
};
LooTable loo_comparison(const std::vector<std::string>& models, const std::vector<LooReport>& reports);

// --- simulation --------------------------------------------------------------

/// h(t) = coefficients' M(t) exp(eta) inside the boundary knots, constant after.
struct HazardSpec {
  KnotVector knots;
  int kappa = 1;
  Eigen::VectorXd coefficients;  // simplex of length dim
  double eta = 0.0;

  void validate() const;
  double hazard(double t) const;
  double cumulative_hazard(double t) const;
  double survival(double t) const { return std::exp(-cumulative_hazard(t)); }
  /// Time with S(t) = u, u in (0, 1]. Infinite when S never reaches u.
  double quantile_time(double u) const;

  /// Constant hazard rate on [0, upper].
  static HazardSpec constant(double rate, double upper);
};

/// n event times by inversion, censored administratively at admin_censor.
std::vector<SurvivalRecord> simulate_survival(const HazardSpec& hazard, int n, Rng& rng,
                                              double admin_censor, int study = 0, int treatment = 0);
std::vector<SurvivalRecord> simulate_survival(const HazardSpec& hazard, int n, std::uint64_t seed,
                                              double admin_censor, int study = 0, int treatment = 0);

// --- multivariate normal export ----------------------------------------------

struct MvnBlock {
  std::string population;
  std::string treatment;
  std::vector<std::string> names;  // "alpha_star[2]".. then "eta"
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  double ridge = 0.0;  // added to the diagonal when the draws were rank deficient
};

struct MvnExport {
  std::vector<double> grid;
  Eigen::MatrixXd basis;  // grid x M-spline dimension: effective I-spline rows
  std::vector<MvnBlock> blocks;
  std::vector<std::string> notes;
};

/// Normal approximation to (alpha*_jk, eta_jk) for each requested treatment in
/// one population. The basis rows continue linearly past the upper knot so
/// that H = softmax(alpha*)' row exp(eta) also holds in the extrapolation.
MvnExport export_mvn(const NmaModel& model, const PosteriorDraws& draws, int study,
                     const std::vector<int>& treatments, const std::vector<double>& grid,
                     const Eigen::VectorXd& x_centred = {});

struct MvnValidation {
  double max_median_gap = 0.0;  // max over blocks and grid of |median S_mvn - median S_exact|
  std::vector<double> per_block;
};

/// Resamples n draws from each block and compares pointwise survival medians
/// against the exact posterior medians.
MvnValidation validate_mvn(const MvnExport& bundle, const NmaModel& model, const PosteriorDraws& draws,
                           int study, const std::vector<int>& treatments, int n, std::uint64_t seed,
                           const Eigen::VectorXd& x_centred = {});

}  // namespace survnma
