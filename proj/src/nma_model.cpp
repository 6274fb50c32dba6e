#include "survnma/nma_model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include "survnma/stats.hpp"

namespace survnma {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

template <class E>
E enum_from(const std::string& s, std::initializer_list<std::pair<const char*, E>> table,
            const char* what) {
  for (const auto& [name, value] : table) {
    if (s == name) return value;
  }
  throw std::invalid_argument(std::string("unknown ") + what + ": " + s);
}

// Reverse cumulative sum: r_m = sum_{l >= m} g_l.
Eigen::VectorXd reverse_cumsum(const Eigen::VectorXd& g) {
  Eigen::VectorXd r(g.size());
  double acc = 0.0;
  for (Eigen::Index m = g.size() - 1; m >= 0; --m) r[m] = (acc += g[m]);
  return r;
}

// x = phi + cumsum(sigma * sqrt_w .* z).
Eigen::VectorXd rebuild_walk(const Eigen::VectorXd& phi, const Eigen::VectorXd& sqrt_w,
                             double sigma, const double* z) {
  Eigen::VectorXd x(phi.size());
  double acc = 0.0;
  for (Eigen::Index l = 0; l < phi.size(); ++l) {
    acc += sigma * sqrt_w[l] * z[l];
    x[l] = phi[l] + acc;
  }
  return x;
}

// Pulls the gradient g of a walk rebuilt by rebuild_walk back onto z and log sigma.
void backprop_walk(const Eigen::VectorXd& g, const Eigen::VectorXd& sqrt_w, double sigma,
                   const double* z, double* gz, double* g_log_sigma) {
  const Eigen::VectorXd r = reverse_cumsum(g);
  for (Eigen::Index m = 0; m < g.size(); ++m) {
    const double c = sigma * sqrt_w[m] * r[m];
    gz[m] += c;
    *g_log_sigma += c * z[m];
  }
}

}  // namespace

const char* to_string(Family f) {
  switch (f) {
    case Family::ProportionalHazards: return "ph";
    case Family::StratifiedNph: return "nph_stratified";
    case Family::CoefficientNph: return "nph_coef";
  }
  return "?";
}

const char* to_string(Effects e) { return e == Effects::Fixed ? "fixed" : "random"; }

const char* to_string(Inconsistency i) {
  switch (i) {
    case Inconsistency::Consistency: return "consistency";
    case Inconsistency::Ume: return "ume";
    case Inconsistency::NodeSplit: return "nodesplit";
  }
  return "?";
}

Family family_from_string(const std::string& s) {
  return enum_from<Family>(s,
                           {{"ph", Family::ProportionalHazards},
                            {"nph_stratified", Family::StratifiedNph},
                            {"nph_coef", Family::CoefficientNph}},
                           "model family");
}

Effects effects_from_string(const std::string& s) {
  return enum_from<Effects>(s, {{"fixed", Effects::Fixed}, {"random", Effects::Random}},
                            "effects type");
}

Inconsistency inconsistency_from_string(const std::string& s) {
  return enum_from<Inconsistency>(s,
                                  {{"consistency", Inconsistency::Consistency},
                                   {"ume", Inconsistency::Ume},
                                   {"nodesplit", Inconsistency::NodeSplit}},
                                  "inconsistency model");
}

void ModelSpec::validate(const SurvivalDataset& data) const {
  if (kappa < 1) throw std::invalid_argument("spline order kappa must be >= 1");
  const auto J = static_cast<std::size_t>(data.num_studies());
  if (knots.per_study.size() != J) {
    throw std::invalid_argument("knot plan covers " + std::to_string(knots.per_study.size()) +
                                " studies, data has " + std::to_string(J));
  }
  for (int j = 0; j < data.num_studies(); ++j) {
    knots.for_study(j).validate();
    if (data.last_time(j) > knots.for_study(j).upper * (1.0 + 1e-12)) {
      throw std::invalid_argument("study '" + data.study_labels()[static_cast<std::size_t>(j)] +
                                  "' has observations beyond its upper boundary knot");
    }
  }
  if (family == Family::CoefficientNph && knots.kind != KnotPlan::Kind::Common) {
    throw std::invalid_argument(
        "the coefficient-effects model needs a common knot vector for every study");
  }
  if (family != Family::CoefficientNph &&
      (!covariates.spline.empty() || !covariates.spline_interactions.empty())) {
    throw std::invalid_argument("covariate effects on spline coefficients need family nph_coef");
  }
  if (family != Family::StratifiedNph && !covariates.strata.empty()) {
    throw std::invalid_argument("stratifying by covariates needs family nph_stratified");
  }
  if (family == Family::StratifiedNph && !stratify_by_treatment && covariates.strata.empty()) {
    throw std::invalid_argument(
        "stratified model without treatment stratification needs strata covariates");
  }
  auto check_cols = [&](const std::vector<std::string>& cols) {
    for (const auto& c : cols) {
      if (data.covariate_index(c) < 0) throw std::invalid_argument("unknown covariate: " + c);
    }
  };
  check_cols(covariates.prognostic);
  check_cols(covariates.effect_modifiers);
  check_cols(covariates.spline);
  check_cols(covariates.spline_interactions);
  check_cols(covariates.strata);
  if (inconsistency == Inconsistency::NodeSplit) {
    const int K = data.num_treatments();
    if (split_a < 0 || split_b < 0 || split_a >= K || split_b >= K || split_a == split_b) {
      throw std::invalid_argument("node-split needs two distinct treatments a and b");
    }
    bool found = false;
    for (int j = 0; j < data.num_studies() && !found; ++j) {
      found = data.has_arm(j, split_a) && data.has_arm(j, split_b);
    }
    if (!found) {
      throw std::invalid_argument("node-split: no study compares " +
                                  data.treatment_labels()[static_cast<std::size_t>(split_a)] +
                                  " and " +
                                  data.treatment_labels()[static_cast<std::size_t>(split_b)]);
    }
  }
}

// ---------------------------------------------------------------------------

std::size_t ParameterLayout::add(const std::string& name, std::vector<std::string> labels) {
  Slice s{name, dim_, labels.size(), std::move(labels)};
  dim_ += s.size;
  slices_.push_back(std::move(s));
  return slices_.back().offset;
}

const ParameterLayout::Slice* ParameterLayout::find(const std::string& name) const {
  for (const auto& s : slices_) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

const ParameterLayout::Slice& ParameterLayout::slice_of(std::size_t i) const {
  for (const auto& s : slices_) {
    if (i >= s.offset && i < s.offset + s.size) return s;
  }
  throw std::out_of_range("parameter index " + std::to_string(i) + " outside the layout");
}

std::vector<std::string> ParameterLayout::coordinate_names() const {
  std::vector<std::string> out;
  out.reserve(dim_);
  for (const auto& s : slices_) {
    for (const auto& l : s.labels) out.push_back(s.name + "[" + l + "]");
  }
  return out;
}

// ---------------------------------------------------------------------------

struct NmaModel::Unpacked {
  const Eigen::VectorXd* theta = nullptr;
  Eigen::VectorXd d;      // K, d[0] = 0
  Eigen::VectorXd d_ume;  // per UME pair
  double split = 0.0;
  double tau = 0.0;
  std::vector<std::vector<double>> delta;  // study x arm position
  Eigen::VectorXd beta1;
  Eigen::MatrixXd beta2;  // K x p2, row 0 zero
  std::vector<Eigen::VectorXd> alpha_star;
  std::vector<double> sigma;
  Eigen::MatrixXd gamma;  // n_coef x K
  double sigma_alpha = 0.0;
  std::vector<Eigen::VectorXd> b1;
  std::vector<double> sigma_b1;
  std::vector<std::vector<Eigen::VectorXd>> b2;  // [k][c], k = 0 empty
  std::vector<double> sigma_b2;                  // (k - 1) * p + c
};

NmaModel::NmaModel(ModelSpec spec, SurvivalDataset data)
    : spec_(std::move(spec)), data_(std::move(data)) {
  data_.validate();
  spec_.validate(data_);
  n_treat_ = data_.num_treatments();

  // Design columns in order of first use.
  const auto& cd = spec_.covariates;
  auto column = [&](const std::string& name) {
    const auto it = std::find(cov_columns_.begin(), cov_columns_.end(), name);
    if (it != cov_columns_.end()) return static_cast<int>(it - cov_columns_.begin());
    cov_columns_.push_back(name);
    cov_data_index_.push_back(data_.covariate_index(name));
    return static_cast<int>(cov_columns_.size()) - 1;
  };
  for (const auto& c : cd.prognostic) prog_idx_.push_back(column(c));
  for (const auto& c : cd.effect_modifiers) em_idx_.push_back(column(c));
  for (const auto& c : cd.spline) spline_idx_.push_back(column(c));
  for (const auto& c : cd.spline_interactions) spline_int_idx_.push_back(column(c));
  for (const auto& c : cd.strata) strata_idx_.push_back(column(c));

  const auto n = static_cast<Eigen::Index>(data_.size());
  const auto p = static_cast<Eigen::Index>(cov_columns_.size());
  cov_centres_ = Eigen::VectorXd::Zero(p);
  x_centred_ = Eigen::MatrixXd::Zero(n, p);
  std::set<int> continuous(prog_idx_.begin(), prog_idx_.end());
  continuous.insert(em_idx_.begin(), em_idx_.end());
  continuous.insert(spline_idx_.begin(), spline_idx_.end());
  continuous.insert(spline_int_idx_.begin(), spline_int_idx_.end());
  for (Eigen::Index c = 0; c < p; ++c) {
    const auto col = data_.covariates().col(cov_data_index_[static_cast<std::size_t>(c)]);
    if (continuous.count(static_cast<int>(c))) cov_centres_[c] = col.mean();
    x_centred_.col(c) = col.array() - cov_centres_[c];
  }

  for (int j = 0; j < data_.num_studies(); ++j) {
    bases_.emplace_back(spec_.knots.for_study(j), spec_.kappa);
  }

  // Strata of baseline coefficients.
  std::map<std::tuple<int, int, std::vector<double>>, int> stratum_ids;
  record_stratum_.resize(data_.size());
  for (std::size_t i = 0; i < data_.size(); ++i) {
    const auto& r = data_.record(i);
    const int trt = spec_.family == Family::StratifiedNph && spec_.stratify_by_treatment
                        ? r.treatment
                        : -1;
    std::vector<double> levels;
    for (int c : strata_idx_) {
      levels.push_back(data_.covariates()(static_cast<Eigen::Index>(i),
                                          cov_data_index_[static_cast<std::size_t>(c)]));
    }
    stratum_ids.emplace(std::make_tuple(r.study, trt, levels), 0);
  }
  for (auto& [key, id] : stratum_ids) {
    id = static_cast<int>(strata_.size());
    const auto& [study, trt, levels] = key;
    Stratum s{study, trt, levels, data_.study_labels()[static_cast<std::size_t>(study)]};
    if (trt >= 0) s.label += ":" + data_.treatment_labels()[static_cast<std::size_t>(trt)];
    for (std::size_t c = 0; c < levels.size(); ++c) {
      std::ostringstream os;
      os << ":" << cd.strata[c] << "=" << levels[c];
      s.label += os.str();
    }
    strata_.push_back(std::move(s));
    const auto& kn = spec_.knots.for_study(study);
    stratum_phi_.push_back(constant_hazard_phi(kn, spec_.kappa));
    stratum_sqrt_w_.push_back(prior_weights(kn, spec_.kappa).cwiseSqrt());
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    const auto& r = data_.record(i);
    const int trt = spec_.family == Family::StratifiedNph && spec_.stratify_by_treatment
                        ? r.treatment
                        : -1;
    std::vector<double> levels;
    for (int c : strata_idx_) {
      levels.push_back(data_.covariates()(static_cast<Eigen::Index>(i),
                                          cov_data_index_[static_cast<std::size_t>(c)]));
    }
    record_stratum_[i] = stratum_ids.at(std::make_tuple(r.study, trt, levels));
  }
  if (spec_.family == Family::CoefficientNph) {
    common_sqrt_w_ = prior_weights(spec_.knots.common, spec_.kappa).cwiseSqrt();
    n_coef_common_ = static_cast<int>(common_sqrt_w_.size());
  }

  // UME pairs (arm-1 treatment, other arm).
  if (spec_.inconsistency == Inconsistency::Ume) {
    std::set<std::pair<int, int>> pairs;
    for (int j = 0; j < data_.num_studies(); ++j) {
      const auto& arms = data_.arms(j);
      for (std::size_t p2 = 1; p2 < arms.size(); ++p2) pairs.insert({arms[0], arms[p2]});
    }
    ume_pairs_.assign(pairs.begin(), pairs.end());
    for (int j = 0; j < data_.num_studies(); ++j) {
      const auto& arms = data_.arms(j);
      std::vector<int> idx(arms.size(), -1);
      for (std::size_t p2 = 1; p2 < arms.size(); ++p2) {
        const auto it = std::find(ume_pairs_.begin(), ume_pairs_.end(),
                                  std::make_pair(arms[0], arms[p2]));
        idx[p2] = static_cast<int>(it - ume_pairs_.begin());
      }
      ume_index_.push_back(std::move(idx));
    }
  }

  build_layout();
  build_groups();
}

void NmaModel::build_layout() {
  const auto& studies = data_.study_labels();
  const auto& trts = data_.treatment_labels();
  const auto J = static_cast<std::size_t>(data_.num_studies());
  const auto K = static_cast<std::size_t>(n_treat_);
  constexpr auto npos = static_cast<std::size_t>(-1);

  off_mu_ = layout_.add("mu", studies);
  off_d_ = off_theta_ = off_log_tau_ = off_re_z_ = off_re_z0_ = npos;
  if (spec_.inconsistency == Inconsistency::Ume) {
    std::vector<std::string> labels;
    for (const auto& [a, k] : ume_pairs_) {
      labels.push_back(trts[static_cast<std::size_t>(k)] + ":" + trts[static_cast<std::size_t>(a)]);
    }
    off_d_ = layout_.add("d", labels);
  } else {
    off_d_ = layout_.add("d", std::vector<std::string>(trts.begin() + 1, trts.end()));
  }
  if (spec_.inconsistency == Inconsistency::NodeSplit) {
    off_theta_ = layout_.add("theta", {trts[static_cast<std::size_t>(spec_.split_b)] + ":" +
                                       trts[static_cast<std::size_t>(spec_.split_a)]});
  }
  re_index_.assign(J, {});
  re_z0_index_.assign(J, -1);
  if (spec_.effects == Effects::Random) {
    off_log_tau_ = layout_.add("log_tau", {"tau"});
    std::vector<std::string> labels, labels0;
    for (std::size_t j = 0; j < J; ++j) {
      const auto& arms = data_.arms(static_cast<int>(j));
      re_index_[j].assign(arms.size(), -1);
      for (std::size_t p = 1; p < arms.size(); ++p) {
        re_index_[j][p] = static_cast<int>(labels.size());
        labels.push_back(studies[j] + ":" + trts[static_cast<std::size_t>(arms[p])]);
      }
      if (arms.size() > 2) {
        re_z0_index_[j] = static_cast<int>(labels0.size());
        labels0.push_back(studies[j]);
      }
    }
    off_re_z_ = layout_.add("re_z", labels);
    off_re_z0_ = layout_.add("re_z0", labels0);
  }

  auto names = [&](const std::vector<int>& idx) {
    std::vector<std::string> out;
    for (int c : idx) out.push_back(cov_columns_[static_cast<std::size_t>(c)]);
    return out;
  };
  off_beta1_ = layout_.add("beta1", names(prog_idx_));
  {
    std::vector<std::string> labels;
    for (std::size_t k = 1; k < K; ++k) {
      for (int c : em_idx_) labels.push_back(trts[k] + ":" + cov_columns_[static_cast<std::size_t>(c)]);
    }
    off_beta2_ = layout_.add("beta2", labels);
  }

  {
    std::vector<std::string> labels, sig;
    for (std::size_t s = 0; s < strata_.size(); ++s) {
      stratum_u_offset_.push_back(labels.size());
      for (Eigen::Index l = 0; l < stratum_phi_[s].size(); ++l) {
        labels.push_back(strata_[s].label + ":" + std::to_string(l + 1));
      }
      sig.push_back(strata_[s].label);
    }
    off_u_ = layout_.add("u_z", labels);
    off_log_sigma_ = layout_.add("log_sigma", sig);
  }

  off_gamma_z_ = off_log_sigma_alpha_ = off_b1_z_ = off_log_sigma_b1_ = off_b2_z_ =
      off_log_sigma_b2_ = npos;
  if (spec_.family == Family::CoefficientNph) {
    const auto nc = static_cast<std::size_t>(n_coef_common_);
    if (spec_.nonprop_effects) {
      std::vector<std::string> labels;
      for (std::size_t k = 0; k <= K; ++k) {
        const std::string who = k < K ? trts[k] : std::string("shared");
        for (std::size_t l = 0; l < nc; ++l) labels.push_back(who + ":" + std::to_string(l + 1));
      }
      off_gamma_z_ = layout_.add("gamma_z", labels);
      off_log_sigma_alpha_ = layout_.add("log_sigma_alpha", {"sigma_alpha"});
    }
    std::vector<std::string> labels, sig;
    for (int c : spline_idx_) {
      const auto& name = cov_columns_[static_cast<std::size_t>(c)];
      for (std::size_t l = 0; l < nc; ++l) labels.push_back(name + ":" + std::to_string(l + 1));
      sig.push_back(name);
    }
    off_b1_z_ = layout_.add("b1_z", labels);
    off_log_sigma_b1_ = layout_.add("log_sigma_b1", sig);
    labels.clear();
    sig.clear();
    for (std::size_t k = 1; k < K; ++k) {
      for (int c : spline_int_idx_) {
        const auto name = trts[k] + ":" + cov_columns_[static_cast<std::size_t>(c)];
        for (std::size_t l = 0; l < nc; ++l) labels.push_back(name + ":" + std::to_string(l + 1));
        sig.push_back(name);
      }
    }
    off_b2_z_ = layout_.add("b2_z", labels);
    off_log_sigma_b2_ = layout_.add("log_sigma_b2", sig);
  }
}

void NmaModel::build_groups() {
  const bool per_record = spec_.family == Family::CoefficientNph &&
                          (!spline_idx_.empty() || !spline_int_idx_.empty());
  std::map<std::pair<int, int>, std::size_t> ids;
  record_group_.resize(data_.size());
  row_offset_.resize(data_.size());
  for (std::size_t i = 0; i < data_.size(); ++i) {
    const auto& r = data_.record(i);
    const int stratum = record_stratum_[i];
    const int trt = spec_.family == Family::CoefficientNph ? r.treatment : -1;
    std::size_t g = 0;
    if (per_record) {
      g = groups_.size();
      groups_.push_back({stratum, trt, {}});
    } else {
      const auto [it, inserted] = ids.emplace(std::make_pair(stratum, trt), groups_.size());
      if (inserted) groups_.push_back({stratum, trt, {}});
      g = it->second;
    }
    groups_[g].records.push_back(i);
    record_group_[i] = g;

    const auto& basis = bases_[static_cast<std::size_t>(r.study)];
    const auto nb = basis.dim();
    double t = 0.0;
    try {
      t = basis.checked_time(r.time);
    } catch (const std::out_of_range&) {
      std::ostringstream msg;
      msg << "record " << i << " (study '" << data_.study_labels()[static_cast<std::size_t>(r.study)]
          << "', time " << r.time << ") lies outside the boundary knots";
      throw std::invalid_argument(msg.str());
    }
    row_offset_[i] = m_rows_.size();
    m_rows_.resize(m_rows_.size() + nb);
    i_rows_.resize(i_rows_.size() + nb);
    basis.mspline(t, std::span<double>(m_rows_.data() + row_offset_[i], nb));
    basis.ispline(t, std::span<double>(i_rows_.data() + row_offset_[i], nb));
  }
}

const SplineBasis& NmaModel::basis(int study) const {
  return bases_.at(static_cast<std::size_t>(study));
}

void NmaModel::unpack(const Eigen::VectorXd& theta, Unpacked& u) const {
  if (static_cast<std::size_t>(theta.size()) != dim()) {
    throw std::invalid_argument("parameter vector has size " + std::to_string(theta.size()) +
                                ", layout expects " + std::to_string(dim()));
  }
  u.theta = &theta;
  const double* th = theta.data();
  const auto K = static_cast<Eigen::Index>(n_treat_);
  constexpr auto npos = static_cast<std::size_t>(-1);

  auto positive = [&](std::size_t off, const char* slice) {
    const double v = std::exp(th[off]);
    if (!std::isfinite(v) || v <= 0.0) {
      const auto& s = layout_.slice_of(off);
      std::ostringstream msg;
      msg << "non-finite value in slice '" << slice << "' (" << s.labels[off - s.offset]
          << " = exp(" << th[off] << "))";
      throw NonFiniteError(msg.str());
    }
    return v;
  };

  if (spec_.inconsistency == Inconsistency::Ume) {
    u.d = Eigen::VectorXd::Zero(K);
    u.d_ume = theta.segment(static_cast<Eigen::Index>(off_d_), static_cast<Eigen::Index>(ume_pairs_.size()));
  } else {
    u.d.resize(K);
    u.d[0] = 0.0;
    u.d.tail(K - 1) = theta.segment(static_cast<Eigen::Index>(off_d_), K - 1);
  }
  u.split = off_theta_ != npos ? th[off_theta_] : 0.0;
  u.tau = off_log_tau_ != npos ? positive(off_log_tau_, "log_tau") : 0.0;

  u.delta.resize(static_cast<std::size_t>(data_.num_studies()));
  for (int j = 0; j < data_.num_studies(); ++j) {
    const auto& arms = data_.arms(j);
    auto& dj = u.delta[static_cast<std::size_t>(j)];
    dj.assign(arms.size(), 0.0);
    for (std::size_t p = 1; p < arms.size(); ++p) {
      double m = spec_.inconsistency == Inconsistency::Ume
                     ? u.d_ume[ume_index_[static_cast<std::size_t>(j)][p]]
                     : u.d[arms[p]] - u.d[arms[0]];
      if (spec_.effects == Effects::Random) {
        const double z = th[off_re_z_ + static_cast<std::size_t>(re_index_[static_cast<std::size_t>(j)][p])];
        const int i0 = re_z0_index_[static_cast<std::size_t>(j)];
        m += i0 < 0 ? u.tau * z : u.tau * kInvSqrt2 * (z + th[off_re_z0_ + static_cast<std::size_t>(i0)]);
      }
      dj[p] = m;
    }
  }

  u.beta1 = theta.segment(static_cast<Eigen::Index>(off_beta1_), static_cast<Eigen::Index>(prog_idx_.size()));
  const auto p2 = static_cast<Eigen::Index>(em_idx_.size());
  u.beta2 = Eigen::MatrixXd::Zero(K, p2);
  for (Eigen::Index k = 1; k < K; ++k) {
    for (Eigen::Index c = 0; c < p2; ++c) u.beta2(k, c) = th[off_beta2_ + static_cast<std::size_t>((k - 1) * p2 + c)];
  }

  u.alpha_star.resize(strata_.size());
  u.sigma.resize(strata_.size());
  for (std::size_t s = 0; s < strata_.size(); ++s) {
    u.sigma[s] = positive(off_log_sigma_ + s, "log_sigma");
    u.alpha_star[s] = rebuild_walk(stratum_phi_[s], stratum_sqrt_w_[s], u.sigma[s],
                                   th + off_u_ + stratum_u_offset_[s]);
  }

  if (spec_.family == Family::CoefficientNph) {
    const Eigen::Index nc = n_coef_common_;
    u.gamma = Eigen::MatrixXd::Zero(nc, K);
    if (spec_.nonprop_effects) {
      u.sigma_alpha = positive(off_log_sigma_alpha_, "log_sigma_alpha");
      const double* z = th + off_gamma_z_;
      const double* z0 = z + K * nc;
      for (Eigen::Index k = 0; k < K; ++k) {
        double acc = 0.0;
        for (Eigen::Index l = 0; l < nc; ++l) {
          acc += u.sigma_alpha * common_sqrt_w_[l] * kInvSqrt2 * (z[k * nc + l] + z0[l]);
          u.gamma(l, k) = acc;
        }
      }
    }
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(nc);
    u.b1.resize(spline_idx_.size());
    u.sigma_b1.resize(spline_idx_.size());
    for (std::size_t c = 0; c < spline_idx_.size(); ++c) {
      u.sigma_b1[c] = positive(off_log_sigma_b1_ + c, "log_sigma_b1");
      u.b1[c] = rebuild_walk(zero, common_sqrt_w_, u.sigma_b1[c],
                             th + off_b1_z_ + c * static_cast<std::size_t>(nc));
    }
    const auto pi = spline_int_idx_.size();
    u.b2.assign(static_cast<std::size_t>(K), {});
    u.sigma_b2.resize(static_cast<std::size_t>(K - 1) * pi);
    for (std::size_t k = 1; k < static_cast<std::size_t>(K); ++k) {
      u.b2[k].resize(pi);
      for (std::size_t c = 0; c < pi; ++c) {
        const std::size_t q = (k - 1) * pi + c;
        u.sigma_b2[q] = positive(off_log_sigma_b2_ + q, "log_sigma_b2");
        u.b2[k][c] = rebuild_walk(zero, common_sqrt_w_, u.sigma_b2[q],
                                  th + off_b2_z_ + q * static_cast<std::size_t>(nc));
      }
    }
  }
}

double NmaModel::delta(const Unpacked& u, int study, int treatment) const {
  const int p = data_.arm_position(study, treatment);
  if (p >= 0) return u.delta[static_cast<std::size_t>(study)][static_cast<std::size_t>(p)];
  const int a = data_.arm_one(study);
  if (spec_.inconsistency == Inconsistency::Ume) {
    const auto it = std::find(ume_pairs_.begin(), ume_pairs_.end(), std::make_pair(a, treatment));
    if (it == ume_pairs_.end()) {
      throw std::invalid_argument("UME model has no effect for " +
                                  data_.treatment_labels()[static_cast<std::size_t>(treatment)] +
                                  " vs " + data_.treatment_labels()[static_cast<std::size_t>(a)]);
    }
    return u.d_ume[it - ume_pairs_.begin()];
  }
  return u.d[treatment] - u.d[a];
}

Eigen::VectorXd NmaModel::group_logits(const Unpacked& u, int stratum, int treatment,
                                       const Eigen::VectorXd& x) const {
  Eigen::VectorXd a = u.alpha_star[static_cast<std::size_t>(stratum)];
  if (spec_.family != Family::CoefficientNph) return a;
  a += u.gamma.col(treatment);
  for (std::size_t c = 0; c < spline_idx_.size(); ++c) a += x[spline_idx_[c]] * u.b1[c];
  if (treatment > 0) {
    for (std::size_t c = 0; c < spline_int_idx_.size(); ++c) {
      a += x[spline_int_idx_[c]] * u.b2[static_cast<std::size_t>(treatment)][c];
    }
  }
  return a;
}

double NmaModel::likelihood(const Unpacked& u, Eigen::VectorXd* grad, Eigen::VectorXd* pointwise,
                            std::optional<std::size_t> only_record) const {
  const double* th = u.theta->data();
  const Eigen::Index K = n_treat_;
  const Eigen::Index p1 = static_cast<Eigen::Index>(prog_idx_.size());
  const Eigen::Index p2 = static_cast<Eigen::Index>(em_idx_.size());
  const bool coef = spec_.family == Family::CoefficientNph;
  const bool random = spec_.effects == Effects::Random;
  const bool ume = spec_.inconsistency == Inconsistency::Ume;
  const bool split = spec_.inconsistency == Inconsistency::NodeSplit;

  std::vector<double> ll(data_.size(), 0.0);

  // Gradient accumulators on structured quantities.
  std::vector<Eigen::VectorXd> g_astar;
  std::vector<std::vector<double>> g_delta;
  Eigen::MatrixXd g_gamma;
  std::vector<Eigen::VectorXd> g_b1;
  std::vector<std::vector<Eigen::VectorXd>> g_b2;
  double* g = nullptr;
  if (grad) {
    g = grad->data();
    g_astar.resize(strata_.size());
    for (std::size_t s = 0; s < strata_.size(); ++s) g_astar[s] = Eigen::VectorXd::Zero(stratum_phi_[s].size());
    g_delta.resize(u.delta.size());
    for (std::size_t j = 0; j < u.delta.size(); ++j) g_delta[j].assign(u.delta[j].size(), 0.0);
    if (coef) {
      g_gamma = Eigen::MatrixXd::Zero(n_coef_common_, K);
      g_b1.assign(spline_idx_.size(), Eigen::VectorXd::Zero(n_coef_common_));
      g_b2.assign(static_cast<std::size_t>(K), std::vector<Eigen::VectorXd>(spline_int_idx_.size(), Eigen::VectorXd::Zero(n_coef_common_)));
    }
  }

  auto run_group = [&](const Group& grp, std::span<const std::size_t> records) {
    const std::size_t first = records.front();
    const Eigen::VectorXd x0 = coef && x_centred_.cols() > 0 ? Eigen::VectorXd(x_centred_.row(static_cast<Eigen::Index>(first))) : Eigen::VectorXd();
    const Eigen::VectorXd logits = group_logits(u, grp.stratum, grp.treatment, x0);
    Eigen::VectorXd alpha;
    try {
      alpha = softmax(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size())));
    } catch (const std::invalid_argument&) {
      throw NonFiniteError("non-finite spline coefficients in stratum '" +
                           strata_[static_cast<std::size_t>(grp.stratum)].label + "'");
    }
    const auto nb = alpha.size();
    Eigen::VectorXd g_alpha;
    if (g) g_alpha = Eigen::VectorXd::Zero(nb);

    for (const std::size_t i : records) {
      const auto& r = data_.record(i);
      const auto ii = static_cast<Eigen::Index>(i);
      const int pos = data_.arm_position(r.study, r.treatment);
      double eta = th[off_mu_ + static_cast<std::size_t>(r.study)] +
                   u.delta[static_cast<std::size_t>(r.study)][static_cast<std::size_t>(pos)];
      for (Eigen::Index c = 0; c < p1; ++c) eta += x_centred_(ii, prog_idx_[static_cast<std::size_t>(c)]) * u.beta1[c];
      for (Eigen::Index c = 0; c < p2; ++c) eta += x_centred_(ii, em_idx_[static_cast<std::size_t>(c)]) * u.beta2(r.treatment, c);
      const bool split_arm = split && r.treatment == spec_.split_b && data_.has_arm(r.study, spec_.split_a);
      if (split_arm) eta += u.split;

      const Eigen::Map<const Eigen::VectorXd> m(m_rows_.data() + row_offset_[i], nb);
      const Eigen::Map<const Eigen::VectorXd> I(i_rows_.data() + row_offset_[i], nb);
      const double e = std::exp(eta);
      const double cum = alpha.dot(I);
      double value = -cum * e;
      double hm = 0.0;
      if (r.event) {
        hm = alpha.dot(m);
        if (!(hm > 0.0)) {
          std::ostringstream msg;
          msg << "zero hazard at the event time of record " << i << " (stratum '"
              << strata_[static_cast<std::size_t>(grp.stratum)].label << "')";
          throw NonFiniteError(msg.str());
        }
        value += std::log(hm) + eta;
      }
      if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "non-finite log-likelihood for record " << i << " (eta = " << eta
            << ", slice 'mu[" << data_.study_labels()[static_cast<std::size_t>(r.study)] << "]')";
        throw NonFiniteError(msg.str());
      }
      ll[i] = value;
      if (!g) continue;

      // d/d eta and d/d alpha of this record.
      const double g_eta = (r.event ? 1.0 : 0.0) - cum * e;
      g_alpha.noalias() -= e * I;
      if (r.event) g_alpha.noalias() += m / hm;

      g[off_mu_ + static_cast<std::size_t>(r.study)] += g_eta;
      if (pos > 0) g_delta[static_cast<std::size_t>(r.study)][static_cast<std::size_t>(pos)] += g_eta;
      for (Eigen::Index c = 0; c < p1; ++c) g[off_beta1_ + static_cast<std::size_t>(c)] += g_eta * x_centred_(ii, prog_idx_[static_cast<std::size_t>(c)]);
      if (r.treatment > 0) {
        for (Eigen::Index c = 0; c < p2; ++c) {
          g[off_beta2_ + static_cast<std::size_t>((r.treatment - 1) * p2 + c)] += g_eta * x_centred_(ii, em_idx_[static_cast<std::size_t>(c)]);
        }
      }
      if (split_arm) g[off_theta_] += g_eta;
    }
    if (!g) return;

    // Through the softmax: d alpha_s / d a*_l = alpha_s (1[s = l+1] - alpha_{l+1}).
    const double mean_g = alpha.dot(g_alpha);
    const Eigen::VectorXd g_logits =
        alpha.tail(nb - 1).cwiseProduct(g_alpha.tail(nb - 1) -
                                        Eigen::VectorXd::Constant(nb - 1, mean_g));
    g_astar[static_cast<std::size_t>(grp.stratum)] += g_logits;
    if (coef) {
      g_gamma.col(grp.treatment) += g_logits;
      for (std::size_t c = 0; c < spline_idx_.size(); ++c) g_b1[c] += x0[spline_idx_[c]] * g_logits;
      if (grp.treatment > 0) {
        for (std::size_t c = 0; c < spline_int_idx_.size(); ++c) {
          g_b2[static_cast<std::size_t>(grp.treatment)][c] += x0[spline_int_idx_[c]] * g_logits;
        }
      }
    }
  };

  if (only_record) {
    const auto& grp = groups_[record_group_[*only_record]];
    const std::size_t one[] = {*only_record};
    run_group(grp, one);
  } else {
    for (const auto& grp : groups_) run_group(grp, grp.records);
  }

  if (g) {
    // Relative effects.
    for (int j = 0; j < data_.num_studies(); ++j) {
      const auto& arms = data_.arms(j);
      const auto js = static_cast<std::size_t>(j);
      for (std::size_t p = 1; p < arms.size(); ++p) {
        const double gd = g_delta[js][p];
        if (gd == 0.0) continue;
        if (ume) {
          g[off_d_ + static_cast<std::size_t>(ume_index_[js][p])] += gd;
        } else {
          if (arms[p] > 0) g[off_d_ + static_cast<std::size_t>(arms[p] - 1)] += gd;
          if (arms[0] > 0) g[off_d_ + static_cast<std::size_t>(arms[0] - 1)] -= gd;
        }
        if (random) {
          const auto iz = off_re_z_ + static_cast<std::size_t>(re_index_[js][p]);
          const int i0 = re_z0_index_[js];
          if (i0 < 0) {
            g[iz] += gd * u.tau;
            g[off_log_tau_] += gd * u.tau * th[iz];
          } else {
            const auto iz0 = off_re_z0_ + static_cast<std::size_t>(i0);
            g[iz] += gd * u.tau * kInvSqrt2;
            g[iz0] += gd * u.tau * kInvSqrt2;
            g[off_log_tau_] += gd * u.tau * kInvSqrt2 * (th[iz] + th[iz0]);
          }
        }
      }
    }
    // Random walks.
    for (std::size_t s = 0; s < strata_.size(); ++s) {
      const auto off = off_u_ + stratum_u_offset_[s];
      backprop_walk(g_astar[s], stratum_sqrt_w_[s], u.sigma[s], th + off, g + off,
                    g + off_log_sigma_ + s);
    }
    if (coef) {
      const Eigen::Index nc = n_coef_common_;
      if (spec_.nonprop_effects) {
        const double* z = th + off_gamma_z_;
        const double* z0 = z + K * nc;
        double* gz = g + off_gamma_z_;
        double* gz0 = gz + K * nc;
        for (Eigen::Index k = 0; k < K; ++k) {
          const Eigen::VectorXd r = reverse_cumsum(g_gamma.col(k));
          for (Eigen::Index l = 0; l < nc; ++l) {
            const double c = u.sigma_alpha * common_sqrt_w_[l] * kInvSqrt2 * r[l];
            gz[k * nc + l] += c;
            gz0[l] += c;
            g[off_log_sigma_alpha_] += c * (z[k * nc + l] + z0[l]);
          }
        }
      }
      for (std::size_t c = 0; c < spline_idx_.size(); ++c) {
        const auto off = off_b1_z_ + c * static_cast<std::size_t>(nc);
        backprop_walk(g_b1[c], common_sqrt_w_, u.sigma_b1[c], th + off, g + off,
                      g + off_log_sigma_b1_ + c);
      }
      const auto pi = spline_int_idx_.size();
      for (std::size_t k = 1; k < static_cast<std::size_t>(K); ++k) {
        for (std::size_t c = 0; c < pi; ++c) {
          const std::size_t q = (k - 1) * pi + c;
          const auto off = off_b2_z_ + q * static_cast<std::size_t>(nc);
          backprop_walk(g_b2[k][c], common_sqrt_w_, u.sigma_b2[q], th + off, g + off,
                        g + off_log_sigma_b2_ + q);
        }
      }
    }
  }

  if (only_record) return ll[*only_record];
  double total = 0.0;
  for (double v : ll) total += v;
  if (pointwise) *pointwise = Eigen::Map<const Eigen::VectorXd>(ll.data(), static_cast<Eigen::Index>(ll.size()));
  return total;
}

double NmaModel::prior(const Eigen::VectorXd& theta, Eigen::VectorXd* grad) const {
  const auto& pr = spec_.priors;
  double lp = 0.0;
  double* g = grad ? grad->data() : nullptr;
  auto normal_block = [&](const ParameterLayout::Slice* s, double sd) {
    if (!s) return;
    for (std::size_t i = s->offset; i < s->offset + s->size; ++i) {
      const double x = theta[static_cast<Eigen::Index>(i)];
      lp += stats::normal_lpdf(x, sd);
      if (g) g[i] -= x / (sd * sd);
    }
  };
  // Half-normal on exp(x), with the log-Jacobian x.
  auto log_half_normal_block = [&](const ParameterLayout::Slice* s, double sd) {
    if (!s) return;
    for (std::size_t i = s->offset; i < s->offset + s->size; ++i) {
      const double x = theta[static_cast<Eigen::Index>(i)];
      const double v = std::exp(x);
      lp += stats::half_normal_lpdf(v, sd) + x;
      if (g) g[i] += 1.0 - v * v / (sd * sd);
    }
  };
  normal_block(layout_.find("mu"), pr.mu_sd);
  normal_block(layout_.find("d"), pr.d_sd);
  normal_block(layout_.find("theta"), pr.theta_sd);
  normal_block(layout_.find("beta1"), pr.beta_sd);
  normal_block(layout_.find("beta2"), pr.beta_sd);
  for (const char* z : {"re_z", "re_z0", "u_z", "gamma_z", "b1_z", "b2_z"}) {
    normal_block(layout_.find(z), 1.0);
  }
  log_half_normal_block(layout_.find("log_tau"), pr.tau_sd);
  log_half_normal_block(layout_.find("log_sigma"), pr.sigma_sd);
  log_half_normal_block(layout_.find("log_sigma_alpha"), pr.sigma_alpha_sd);
  log_half_normal_block(layout_.find("log_sigma_b1"), pr.sigma_b_sd);
  log_half_normal_block(layout_.find("log_sigma_b2"), pr.sigma_b_sd);
  return lp;
}

void NmaModel::check_finite(const Eigen::VectorXd& theta, const Eigen::VectorXd* grad, double value,
                            const char* what) const {
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    if (!std::isfinite(theta[i])) {
      const auto& s = layout_.slice_of(static_cast<std::size_t>(i));
      throw NonFiniteError(std::string("non-finite parameter in slice '") + s.name + "' (" +
                           s.labels[static_cast<std::size_t>(i) - s.offset] + ")");
    }
  }
  if (grad) {
    for (Eigen::Index i = 0; i < grad->size(); ++i) {
      if (!std::isfinite((*grad)[i])) {
        const auto& s = layout_.slice_of(static_cast<std::size_t>(i));
        throw NonFiniteError(std::string("non-finite ") + what + " gradient in slice '" + s.name +
                             "' (" + s.labels[static_cast<std::size_t>(i) - s.offset] + ")");
      }
    }
  }
  if (!std::isfinite(value)) throw NonFiniteError(std::string("non-finite ") + what);
}

double NmaModel::log_posterior(const Eigen::VectorXd& theta, Eigen::VectorXd* grad) const {
  Unpacked u;
  unpack(theta, u);
  if (grad) grad->setZero(static_cast<Eigen::Index>(dim()));
  const double lp = likelihood(u, grad, nullptr, std::nullopt) + prior(theta, grad);
  check_finite(theta, grad, lp, "log posterior");
  return lp;
}

double NmaModel::log_prior(const Eigen::VectorXd& theta, Eigen::VectorXd* grad) const {
  Unpacked u;
  unpack(theta, u);
  if (grad) grad->setZero(static_cast<Eigen::Index>(dim()));
  const double lp = prior(theta, grad);
  check_finite(theta, grad, lp, "log prior");
  return lp;
}

Eigen::VectorXd NmaModel::pointwise_loglik(const Eigen::VectorXd& theta) const {
  Unpacked u;
  unpack(theta, u);
  Eigen::VectorXd out;
  likelihood(u, nullptr, &out, std::nullopt);
  return out;
}

double NmaModel::log_likelihood(const Eigen::VectorXd& theta) const {
  Unpacked u;
  unpack(theta, u);
  return likelihood(u, nullptr, nullptr, std::nullopt);
}

PointLogLik NmaModel::loglik_point(const Eigen::VectorXd& theta, std::size_t record) const {
  if (record >= data_.size()) throw std::out_of_range("record index out of range");
  Unpacked u;
  unpack(theta, u);
  PointLogLik out;
  out.grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim()));
  out.value = likelihood(u, &out.grad, nullptr, record);
  return out;
}

Eigen::VectorXd NmaModel::record_covariates(std::size_t record) const {
  return x_centred_.row(static_cast<Eigen::Index>(record));
}

Eigen::VectorXd NmaModel::centre(const Eigen::VectorXd& raw) const {
  if (raw.size() != cov_centres_.size()) {
    throw std::invalid_argument("expected " + std::to_string(cov_centres_.size()) +
                                " covariate values, got " + std::to_string(raw.size()));
  }
  return raw - cov_centres_;
}

Eigen::VectorXd NmaModel::study_mean_covariates(int study) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(cov_centres_.size());
  const auto& recs = data_.study_records(study);
  for (auto i : recs) out += x_centred_.row(static_cast<Eigen::Index>(i)).transpose();
  out /= static_cast<double>(recs.size());
  return out + cov_centres_;
}

double NmaModel::linear_predictor(const Eigen::VectorXd& theta, int study, int treatment,
                                  const Eigen::VectorXd& x_centred) const {
  if (treatment < 0 || treatment >= n_treat_) throw std::invalid_argument("unknown treatment id");
  if (spec_.family == Family::StratifiedNph && !data_.has_arm(study, treatment)) {
    throw std::invalid_argument("treatment not in study");
  }
  const Eigen::VectorXd x = x_centred.size() ? x_centred : Eigen::VectorXd::Zero(cov_centres_.size());
  Unpacked u;
  unpack(theta, u);
  double eta = theta[static_cast<Eigen::Index>(off_mu_) + study] + delta(u, study, treatment);
  for (std::size_t c = 0; c < prog_idx_.size(); ++c) eta += x[prog_idx_[c]] * u.beta1[static_cast<Eigen::Index>(c)];
  for (std::size_t c = 0; c < em_idx_.size(); ++c) eta += x[em_idx_[c]] * u.beta2(treatment, static_cast<Eigen::Index>(c));
  if (spec_.inconsistency == Inconsistency::NodeSplit && treatment == spec_.split_b &&
      data_.has_arm(study, spec_.split_a) && data_.has_arm(study, spec_.split_b)) {
    eta += u.split;
  }
  return eta;
}

int NmaModel::stratum_of(int study, int treatment, const Eigen::VectorXd& x_raw) const {
  const int trt = spec_.family == Family::StratifiedNph && spec_.stratify_by_treatment ? treatment : -1;
  std::vector<double> levels;
  for (int c : strata_idx_) levels.push_back(x_raw[c]);
  for (std::size_t s = 0; s < strata_.size(); ++s) {
    if (strata_[s].study == study && strata_[s].treatment == trt && strata_[s].levels == levels) {
      return static_cast<int>(s);
    }
  }
  return -1;
}

bool NmaModel::can_predict(int study, int treatment) const {
  if (study < 0 || study >= data_.num_studies() || treatment < 0 || treatment >= n_treat_) return false;
  if (spec_.family == Family::StratifiedNph && spec_.stratify_by_treatment) {
    return data_.has_arm(study, treatment);
  }
  if (spec_.inconsistency == Inconsistency::Ume && !data_.has_arm(study, treatment)) {
    return has_relative_effect(data_.arm_one(study), treatment);
  }
  return true;
}

Eigen::VectorXd NmaModel::coefficient_logits(const Eigen::VectorXd& theta, int study, int treatment,
                                             const Eigen::VectorXd& x_centred) const {
  const Eigen::VectorXd x = x_centred.size() ? x_centred : Eigen::VectorXd::Zero(cov_centres_.size());
  const int s = stratum_of(study, treatment, x + cov_centres_);
  if (s < 0) {
    throw std::invalid_argument(
        "no fitted baseline stratum for study '" +
        data_.study_labels().at(static_cast<std::size_t>(study)) + "', treatment '" +
        data_.treatment_labels().at(static_cast<std::size_t>(treatment)) +
        "': the stratified model only predicts observed arms");
  }
  Unpacked u;
  unpack(theta, u);
  return group_logits(u, s, treatment, x);
}

Eigen::VectorXd NmaModel::arm_coefficients(const Eigen::VectorXd& theta, int study, int treatment,
                                           const Eigen::VectorXd& x_centred) const {
  const auto a = coefficient_logits(theta, study, treatment, x_centred);
  return softmax(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())));
}

bool NmaModel::has_relative_effect(int a, int k) const {
  if (a == k) return true;
  if (spec_.inconsistency != Inconsistency::Ume) return true;
  return std::find(ume_pairs_.begin(), ume_pairs_.end(), std::make_pair(a, k)) != ume_pairs_.end() ||
         std::find(ume_pairs_.begin(), ume_pairs_.end(), std::make_pair(k, a)) != ume_pairs_.end();
}

double NmaModel::relative_effect(const Eigen::VectorXd& theta, int a, int k) const {
  if (a == k) return 0.0;
  if (spec_.inconsistency == Inconsistency::Ume) {
    for (std::size_t i = 0; i < ume_pairs_.size(); ++i) {
      const auto off = static_cast<Eigen::Index>(off_d_ + i);
      if (ume_pairs_[i] == std::make_pair(a, k)) return theta[off];
      if (ume_pairs_[i] == std::make_pair(k, a)) return -theta[off];
    }
    throw std::invalid_argument("UME model has no direct effect for this pair");
  }
  auto d = [&](int t) { return t == 0 ? 0.0 : theta[static_cast<Eigen::Index>(off_d_) + t - 1]; };
  return d(k) - d(a);
}

std::vector<std::string> NmaModel::derived_names() const {
  std::vector<std::string> out;
  const auto& trts = data_.treatment_labels();
  if (const auto* s = layout_.find("d")) {
    for (const auto& l : s->labels) out.push_back("d[" + l + "]");
  }
  if (const auto* s = layout_.find("theta")) out.push_back("theta[" + s->labels[0] + "]");
  if (layout_.find("log_tau")) out.push_back("tau");
  for (const auto& l : layout_.find("beta1")->labels) out.push_back("beta1[" + l + "]");
  for (const auto& l : layout_.find("beta2")->labels) out.push_back("beta2[" + l + "]");
  for (const auto& s : strata_) out.push_back("sigma[" + s.label + "]");
  if (spec_.family == Family::CoefficientNph && spec_.nonprop_effects) {
    out.push_back("sigma_alpha");
    for (std::size_t k = 1; k < trts.size(); ++k) {
      for (int l = 0; l < n_coef_common_; ++l) {
        out.push_back("d_alpha[" + trts[k] + ":" + std::to_string(l + 1) + "]");
      }
    }
  }
  for (const char* name : {"log_sigma_b1", "log_sigma_b2"}) {
    if (const auto* s = layout_.find(name)) {
      for (const auto& l : s->labels) out.push_back(std::string(name + 4) + "[" + l + "]");
    }
  }
  return out;
}

Eigen::VectorXd NmaModel::derived(const Eigen::VectorXd& theta) const {
  Unpacked u;
  unpack(theta, u);
  std::vector<double> out;
  if (const auto* s = layout_.find("d")) {
    for (std::size_t i = 0; i < s->size; ++i) out.push_back(theta[static_cast<Eigen::Index>(s->offset + i)]);
  }
  if (layout_.find("theta")) out.push_back(u.split);
  if (layout_.find("log_tau")) out.push_back(u.tau);
  for (Eigen::Index i = 0; i < u.beta1.size(); ++i) out.push_back(u.beta1[i]);
  if (const auto* s = layout_.find("beta2")) {
    for (std::size_t i = 0; i < s->size; ++i) out.push_back(theta[static_cast<Eigen::Index>(s->offset + i)]);
  }
  for (double s : u.sigma) out.push_back(s);
  if (spec_.family == Family::CoefficientNph && spec_.nonprop_effects) {
    out.push_back(u.sigma_alpha);
    for (Eigen::Index k = 1; k < n_treat_; ++k) {
      for (Eigen::Index l = 0; l < n_coef_common_; ++l) out.push_back(u.gamma(l, k) - u.gamma(l, 0));
    }
  }
  for (double s : u.sigma_b1) out.push_back(s);
  for (double s : u.sigma_b2) out.push_back(s);
  return Eigen::Map<const Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

Eigen::VectorXd NmaModel::initial_point(Rng& rng, double radius) const {
  std::uniform_real_distribution<double> unif(-radius, radius);
  Eigen::VectorXd theta(static_cast<Eigen::Index>(dim()));
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] = unif(rng);
  return theta;
}

}  // namespace survnma
