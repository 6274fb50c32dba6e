#pragma once

// Joint log-posterior of the M-spline network meta-analysis models.
//
// All sampled quantities are unconstrained: standard deviations are carried on
// the log scale (with the Jacobian included) and random walks, random effects
// and non-proportionality effects are non-centred, i.e. the sampler sees the
// standard-normal innovations and the model rebuilds the structured values.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "survnma/coefficient_priors.hpp"
#include "survnma/dataset.hpp"
#include "survnma/knot_planner.hpp"
#include "survnma/spline_basis.hpp"

namespace survnma {

enum class Family { ProportionalHazards, StratifiedNph, CoefficientNph };
enum class Effects { Fixed, Random };
enum class Inconsistency { Consistency, Ume, NodeSplit };

const char* to_string(Family f);
const char* to_string(Effects e);
const char* to_string(Inconsistency i);
Family family_from_string(const std::string& s);
Effects effects_from_string(const std::string& s);
Inconsistency inconsistency_from_string(const std::string& s);

/// Prior scales. Normal(0, sd^2) for locations, half-Normal(0, sd^2) for SDs.
struct PriorSettings {
  double mu_sd = 10.0;
  double d_sd = 10.0;
  double theta_sd = 10.0;
  double beta_sd = 10.0;
  double tau_sd = 1.0;
  double sigma_sd = 1.0;
  double sigma_alpha_sd = 1.0;
  double sigma_b_sd = 1.0;

  bool operator==(const PriorSettings&) const = default;
};

/// Covariate columns (by name) and their roles.
struct CovariateDesign {
  std::vector<std::string> prognostic;          // beta_1
  std::vector<std::string> effect_modifiers;    // beta_{2,k}
  std::vector<std::string> spline;              // B^(alpha)_1, coefficient-effects family
  std::vector<std::string> spline_interactions; // B^(alpha)_{2,k}
  std::vector<std::string> strata;              // discrete, stratified family

  bool empty() const {
    return prognostic.empty() && effect_modifiers.empty() && spline.empty() &&
           spline_interactions.empty() && strata.empty();
  }
  bool operator==(const CovariateDesign&) const = default;
};

struct ModelSpec {
  Family family = Family::ProportionalHazards;
  Effects effects = Effects::Fixed;
  Inconsistency inconsistency = Inconsistency::Consistency;
  int split_a = -1;  // node-split comparison b vs a (treatment ids)
  int split_b = -1;
  int kappa = 4;
  KnotPlan knots;
  bool stratify_by_treatment = true;  // stratified family only
  bool nonprop_effects = true;        // gamma^(alpha) in the coefficient-effects family
  CovariateDesign covariates;
  PriorSettings priors;

  /// Throws std::invalid_argument if the spec cannot be fitted to data.
  void validate(const SurvivalDataset& data) const;
};

/// Named slices of the flat parameter vector.
class ParameterLayout {
 public:
  struct Slice {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
    std::vector<std::string> labels;  // one per coordinate
  };

  std::size_t add(const std::string& name, std::vector<std::string> labels);
  std::size_t dim() const { return dim_; }
  const std::vector<Slice>& slices() const { return slices_; }
  /// Slice by name, or nullptr.
  const Slice* find(const std::string& name) const;
  /// The slice containing coordinate i.
  const Slice& slice_of(std::size_t i) const;
  /// Full coordinate names, e.g. "mu[S1]".
  std::vector<std::string> coordinate_names() const;

 private:
  std::vector<Slice> slices_;
  std::size_t dim_ = 0;
};

/// Raised when an intermediate value is not finite; names the offending slice.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PointLogLik {
  double value = 0.0;
  Eigen::VectorXd grad;
};

/// Immutable, reentrant model object: precomputed bases plus the layout.
class NmaModel {
 public:
  NmaModel(ModelSpec spec, SurvivalDataset data);

  const ModelSpec& spec() const { return spec_; }
  const SurvivalDataset& data() const { return data_; }
  const ParameterLayout& layout() const { return layout_; }
  std::size_t dim() const { return layout_.dim(); }
  std::size_t num_records() const { return data_.size(); }

  /// Log posterior (up to the data-independent evidence constant). When grad is
  /// non-null it is resized to dim() and filled with the analytic gradient.
  double log_posterior(const Eigen::VectorXd& theta, Eigen::VectorXd* grad = nullptr) const;
  /// Log prior only (all terms of log_posterior except the likelihood).
  double log_prior(const Eigen::VectorXd& theta, Eigen::VectorXd* grad = nullptr) const;
  /// Per-record log-likelihood contributions, in record order.
  Eigen::VectorXd pointwise_loglik(const Eigen::VectorXd& theta) const;
  /// Total log-likelihood, summed in record order.
  double log_likelihood(const Eigen::VectorXd& theta) const;
  /// One record's contribution and its gradient.
  PointLogLik loglik_point(const Eigen::VectorXd& theta, std::size_t record) const;

  /// Covariate vector of a record, centred as used by the model (all design
  /// columns, in the order of covariate_columns()).
  Eigen::VectorXd record_covariates(std::size_t record) const;
  /// Names of the design columns, in model order.
  const std::vector<std::string>& covariate_columns() const { return cov_columns_; }
  /// Centring constants per design column (zero for strata columns).
  const Eigen::VectorXd& covariate_centres() const { return cov_centres_; }
  /// Centres a raw covariate vector given in covariate_columns() order.
  Eigen::VectorXd centre(const Eigen::VectorXd& raw) const;
  /// Mean raw covariates of a study (the default population for predictions).
  Eigen::VectorXd study_mean_covariates(int study) const;

  /// eta_jk(x) with x already centred. For a treatment not observed in the
  /// study, the mean relative effect against the study's arm-1 treatment is used.
  double linear_predictor(const Eigen::VectorXd& theta, int study, int treatment,
                          const Eigen::VectorXd& x_centred = {}) const;
  /// Inverse-softmax spline coefficients alpha*_jk(x).
  Eigen::VectorXd coefficient_logits(const Eigen::VectorXd& theta, int study, int treatment,
                                     const Eigen::VectorXd& x_centred = {}) const;
  /// softmax(coefficient_logits(...)).
  Eigen::VectorXd arm_coefficients(const Eigen::VectorXd& theta, int study, int treatment,
                                   const Eigen::VectorXd& x_centred = {}) const;
  /// Whether curves may be predicted for (study, treatment).
  bool can_predict(int study, int treatment) const;

  /// Spline basis used for a study's records.
  const SplineBasis& basis(int study) const;
  int num_coefficients(int study) const { return static_cast<int>(basis(study).dim()) - 1; }

  /// Relative effect d_k for treatment k against the reference (consistency
  /// and node-split). For UME, the effect of k vs a for the pair (a, k).
  double relative_effect(const Eigen::VectorXd& theta, int a, int k) const;
  /// Whether the relative effect of k vs a is identified by the spec.
  bool has_relative_effect(int a, int k) const;

  /// Human-readable derived quantities per draw (d, tau, sigma, ...).
  std::vector<std::string> derived_names() const;
  Eigen::VectorXd derived(const Eigen::VectorXd& theta) const;

  /// Baseline-coefficient strata.
  struct Stratum {
    int study = 0;
    int treatment = -1;         // -1 when not stratified by treatment
    std::vector<double> levels; // discrete covariate levels (raw)
    std::string label;
  };
  const std::vector<Stratum>& strata() const { return strata_; }

  /// Uniform(-radius, radius) on every unconstrained coordinate.
  Eigen::VectorXd initial_point(Rng& rng, double radius) const;

  /// Pairs (a, k) carrying a UME effect.
  const std::vector<std::pair<int, int>>& ume_pairs() const { return ume_pairs_; }

 private:
  struct Unpacked;
  // Records sharing one coefficient vector.
  struct Group {
    int stratum = 0;
    int treatment = -1;  // set when logits depend on treatment
    std::vector<std::size_t> records;
  };

  void build_layout();
  void build_groups();
  void unpack(const Eigen::VectorXd& theta, Unpacked& u) const;
  // Likelihood over all records. Adds into grad if non-null; writes per-record
  // terms into pointwise if non-null.
  double likelihood(const Unpacked& u, Eigen::VectorXd* grad, Eigen::VectorXd* pointwise,
                    std::optional<std::size_t> only_record) const;
  double prior(const Eigen::VectorXd& theta, Eigen::VectorXd* grad) const;
  void check_finite(const Eigen::VectorXd& theta, const Eigen::VectorXd* grad, double value,
                    const char* what) const;

  int stratum_of(int study, int treatment, const Eigen::VectorXd& x_raw_levels) const;
  double delta(const Unpacked& u, int study, int treatment) const;
  Eigen::VectorXd group_logits(const Unpacked& u, int stratum, int treatment,
                               const Eigen::VectorXd& x) const;

  ModelSpec spec_;
  SurvivalDataset data_;
  ParameterLayout layout_;

  int n_treat_ = 0;
  std::vector<std::string> cov_columns_;
  std::vector<int> cov_data_index_;  // design column -> dataset covariate column
  Eigen::VectorXd cov_centres_;
  std::vector<int> prog_idx_, em_idx_, spline_idx_, spline_int_idx_, strata_idx_;
  Eigen::MatrixXd x_centred_;  // n x design columns

  std::vector<SplineBasis> bases_;  // per study
  std::vector<Stratum> strata_;
  std::vector<int> record_stratum_;
  std::vector<Eigen::VectorXd> stratum_phi_, stratum_sqrt_w_;
  Eigen::VectorXd common_sqrt_w_;  // coefficient-effects family

  std::vector<std::pair<int, int>> ume_pairs_;
  std::vector<std::vector<int>> ume_index_;  // study, arm position -> ume pair index (-1 arm 1)
  std::vector<std::vector<int>> re_index_;   // study, arm position -> re_z coordinate (-1 arm 1)
  std::vector<int> re_z0_index_;             // study -> re_z0 coordinate or -1

  // Offsets of slices (npos when absent).
  std::size_t off_mu_ = 0, off_d_ = 0, off_theta_ = 0, off_log_tau_ = 0, off_re_z_ = 0,
              off_re_z0_ = 0, off_beta1_ = 0, off_beta2_ = 0, off_u_ = 0, off_log_sigma_ = 0,
              off_gamma_z_ = 0, off_log_sigma_alpha_ = 0, off_b1_z_ = 0, off_log_sigma_b1_ = 0,
              off_b2_z_ = 0, off_log_sigma_b2_ = 0;
  std::vector<std::size_t> stratum_u_offset_;
  int n_coef_common_ = 0;

  std::vector<Group> groups_;
  std::vector<std::size_t> record_group_;
  std::vector<double> m_rows_, i_rows_;  // flattened basis rows per record
  std::vector<std::size_t> row_offset_;
};

}  // namespace survnma
