#include "survnma/inference_products.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <boost/math/tools/roots.hpp>

#include "survnma/stats.hpp"

namespace survnma {

const char* to_string(CurveQuantity q) {
  switch (q) {
    case CurveQuantity::Survival: return "survival";
    case CurveQuantity::Hazard: return "hazard";
    case CurveQuantity::CumulativeHazard: return "cumulative_hazard";
    case CurveQuantity::LogHazardRatio: return "log_hazard_ratio";
  }
  return "?";
}

Eigen::VectorXd CurveEstimate::median() const {
  const auto it = std::find(levels.begin(), levels.end(), 0.5);
  if (it == levels.end()) throw std::logic_error("curve summary has no median level");
  return quantiles.col(it - levels.begin());
}

std::vector<double> default_grid(const NmaModel& model, int study, double horizon, int points) {
  if (!(horizon > 0.0) || points < 2) throw std::invalid_argument("grid needs horizon > 0 and >= 2 points");
  std::vector<double> g;
  for (int i = 0; i < points; ++i) g.push_back(horizon * i / (points - 1));
  for (double k : model.basis(study).knots().all()) {
    if (k >= 0.0 && k <= horizon) g.push_back(k);
  }
  std::sort(g.begin(), g.end());
  g.erase(std::unique(g.begin(), g.end()), g.end());
  return g;
}

namespace {

// Basis rows on a grid: M at min(t, upper), I at min(t, upper), and the
// distance past the upper knot.
struct GridBasis {
  Eigen::MatrixXd m, i;
  Eigen::VectorXd extra;
};

GridBasis grid_basis(const SplineBasis& basis, const std::vector<double>& grid) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  const auto dim = static_cast<Eigen::Index>(basis.dim());
  const double upper = basis.knots().upper;
  GridBasis gb{Eigen::MatrixXd(n, dim), Eigen::MatrixXd(n, dim), Eigen::VectorXd(n)};
  std::vector<double> row(static_cast<std::size_t>(dim));
  for (Eigen::Index g = 0; g < n; ++g) {
    const double t = grid[static_cast<std::size_t>(g)];
    if (!std::isfinite(t)) throw std::invalid_argument("non-finite grid time");
    const double tc = std::min(t, upper);
    basis.mspline(tc, row);
    gb.m.row(g) = Eigen::Map<const Eigen::RowVectorXd>(row.data(), dim);
    basis.ispline(tc, row);
    gb.i.row(g) = Eigen::Map<const Eigen::RowVectorXd>(row.data(), dim);
    gb.extra[g] = std::max(0.0, t - upper);
  }
  return gb;
}

Eigen::VectorXd resolve_covariates(const NmaModel& model, int study, const PredictionOptions& opt) {
  if (model.covariate_columns().empty()) return {};
  return model.centre(opt.covariates ? *opt.covariates : model.study_mean_covariates(study));
}

void check_arm(const NmaModel& model, int study, int treatment) {
  const auto& data = model.data();
  if (study < 0 || study >= data.num_studies()) throw std::invalid_argument("unknown population study id");
  if (treatment < 0 || treatment >= data.num_treatments()) throw std::invalid_argument("unknown treatment id");
  if (!model.can_predict(study, treatment)) {
    throw std::invalid_argument("cannot predict treatment '" +
                                data.treatment_labels()[static_cast<std::size_t>(treatment)] +
                                "' in population '" + data.study_labels()[static_cast<std::size_t>(study)] +
                                "': the " + to_string(model.spec().family) +
                                " family only predicts arms observed in that study");
  }
}

CurveEstimate summarise(const Eigen::MatrixXd& per_draw, const std::vector<double>& grid,
                        const std::vector<double>& levels) {
  CurveEstimate c;
  c.time = grid;
  c.levels = levels;
  c.quantiles = pointwise_ribbons(per_draw, grid, levels).values;
  c.mean = per_draw.colwise().mean().transpose();
  return c;
}

}  // namespace

ArmCurves evaluate_arm(const NmaModel& model, const Eigen::MatrixXd& draws, int study, int treatment,
                       const std::vector<double>& grid, const Eigen::VectorXd& x_centred) {
  check_arm(model, study, treatment);
  const auto gb = grid_basis(model.basis(study), grid);
  const auto n = draws.rows();
  const auto g = static_cast<Eigen::Index>(grid.size());
  ArmCurves out{Eigen::MatrixXd(n, g), Eigen::MatrixXd(n, g), Eigen::MatrixXd(n, g)};
  for (Eigen::Index s = 0; s < n; ++s) {
    const Eigen::VectorXd theta = draws.row(s).transpose();
    const Eigen::VectorXd alpha = model.arm_coefficients(theta, study, treatment, x_centred);
    const double rate = std::exp(model.linear_predictor(theta, study, treatment, x_centred));
    const Eigen::VectorXd base_h = gb.m * alpha;
    const Eigen::VectorXd base_cum = gb.i * alpha + base_h.cwiseProduct(gb.extra);
    out.hazard.row(s) = (rate * base_h).transpose();
    out.cumhaz.row(s) = (rate * base_cum).transpose();
    out.survival.row(s) = (-out.cumhaz.row(s).array()).exp();
  }
  return out;
}

std::vector<CurveEstimate> predict_curves(const NmaModel& model, const PosteriorDraws& draws, int study,
                                          const std::vector<int>& treatments,
                                          const std::vector<double>& grid,
                                          const PredictionOptions& options) {
  const auto x = resolve_covariates(model, study, options);
  const auto& data = model.data();
  for (int k : treatments) check_arm(model, study, k);
  std::vector<CurveEstimate> out;
  for (int k : treatments) {
    const auto arm = evaluate_arm(model, draws.draws, study, k, grid, x);
    const std::pair<CurveQuantity, const Eigen::MatrixXd*> parts[] = {
        {CurveQuantity::Survival, &arm.survival},
        {CurveQuantity::Hazard, &arm.hazard},
        {CurveQuantity::CumulativeHazard, &arm.cumhaz}};
    for (const auto& [q, m] : parts) {
      auto c = summarise(*m, grid, options.levels);
      c.quantity = q;
      c.population = data.study_labels()[static_cast<std::size_t>(study)];
      c.treatment = data.treatment_labels()[static_cast<std::size_t>(k)];
      c.conditional = options.covariates.has_value();
      out.push_back(std::move(c));
    }
  }
  return out;
}

std::vector<CurveEstimate> log_hazard_ratio_curves(const NmaModel& model, const PosteriorDraws& draws,
                                                   int study, const std::vector<int>& treatments,
                                                   int reference, const std::vector<double>& grid,
                                                   const PredictionOptions& options) {
  const auto& data = model.data();
  if (reference < 0 || reference >= data.num_treatments()) {
    throw std::invalid_argument("reference treatment is not in the treatment set");
  }
  check_arm(model, study, reference);
  for (int k : treatments) check_arm(model, study, k);
  const auto x = resolve_covariates(model, study, options);
  const auto gb = grid_basis(model.basis(study), grid);
  const auto n = draws.draws.rows();
  std::vector<CurveEstimate> out;
  for (int k : treatments) {
    Eigen::MatrixXd lhr(n, static_cast<Eigen::Index>(grid.size()));
    for (Eigen::Index s = 0; s < n; ++s) {
      const Eigen::VectorXd theta = draws.draws.row(s).transpose();
      const Eigen::VectorXd ak = model.arm_coefficients(theta, study, k, x);
      const Eigen::VectorXd ar = model.arm_coefficients(theta, study, reference, x);
      const double eta_diff =
          model.linear_predictor(theta, study, k, x) - model.linear_predictor(theta, study, reference, x);
      const Eigen::ArrayXd hk = (gb.m * ak).array(), hr = (gb.m * ar).array();
      lhr.row(s) = (hk.log() - hr.log() + eta_diff).matrix().transpose();
    }
    auto c = summarise(lhr, grid, options.levels);
    c.quantity = CurveQuantity::LogHazardRatio;
    c.population = data.study_labels()[static_cast<std::size_t>(study)];
    c.treatment = data.treatment_labels()[static_cast<std::size_t>(k)];
    c.reference = data.treatment_labels()[static_cast<std::size_t>(reference)];
    c.conditional = options.covariates.has_value();
    out.push_back(std::move(c));
  }
  return out;
}

// --- PSIS-LOO ------------------------------------------------------------------

GpdFit fit_generalized_pareto(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const auto n = x.size();
  if (n < 2 || !(x.back() > 0.0)) return {std::numeric_limits<double>::infinity(), 0.0};
  constexpr double kPrior = 3.0;
  const std::size_t m = 30 + static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
  const double xstar = x[static_cast<std::size_t>(std::floor(n / 4.0 + 0.5)) - 1];
  std::vector<double> theta(m), l_theta(m);
  for (std::size_t j = 0; j < m; ++j) {
    theta[j] = 1.0 / x[n - 1] + (1.0 - std::sqrt(m / (j + 0.5))) / kPrior / xstar;
    double k = 0.0;
    for (double v : x) k += std::log1p(-theta[j] * v);
    k /= static_cast<double>(n);
    l_theta[j] = static_cast<double>(n) * (std::log(-theta[j] / k) - k - 1.0);
  }
  const double lse = stats::log_sum_exp(l_theta);
  double theta_hat = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const double w = std::exp(l_theta[j] - lse);
    if (std::isfinite(w)) theta_hat += theta[j] * w;
  }
  double k = 0.0;
  for (double v : x) k += std::log1p(-theta_hat * v);
  k /= static_cast<double>(n);
  const double sigma = -k / theta_hat;
  // Weakly informative shrinkage towards 0.5.
  const double nd = static_cast<double>(n);
  k = k * nd / (nd + 10.0) + 10.0 * 0.5 / (nd + 10.0);
  if (!std::isfinite(k) || !std::isfinite(sigma)) return {std::numeric_limits<double>::infinity(), 0.0};
  return {k, sigma};
}

PsisResult psis(const Eigen::VectorXd& log_ratios) {
  const auto s = static_cast<std::size_t>(log_ratios.size());
  PsisResult out;
  out.log_weights = log_ratios;
  const double max_lr = log_ratios.maxCoeff();
  out.log_weights.array() -= max_lr;
  const std::size_t tail = static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(s)));
  if (tail < 5 || tail >= s) {
    out.pareto_k = std::numeric_limits<double>::infinity();
    return out;
  }
  std::vector<std::size_t> order(s);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return out.log_weights[static_cast<Eigen::Index>(a)] < out.log_weights[static_cast<Eigen::Index>(b)];
  });
  const double cutoff = out.log_weights[static_cast<Eigen::Index>(order[s - tail - 1])];
  const double exp_cut = std::exp(cutoff);
  std::vector<double> exceed;
  exceed.reserve(tail);
  for (std::size_t i = s - tail; i < s; ++i) {
    exceed.push_back(std::exp(out.log_weights[static_cast<Eigen::Index>(order[i])]) - exp_cut);
  }
  // Ties at the cutoff leave nothing to fit.
  if (std::all_of(exceed.begin(), exceed.end(), [](double v) { return v <= 0.0; })) {
    out.pareto_k = 0.0;
    return out;
  }
  const auto fit = fit_generalized_pareto(exceed);
  out.pareto_k = fit.k;
  if (std::isfinite(fit.k)) {
    for (std::size_t i = 0; i < tail; ++i) {
      const double p = (static_cast<double>(i) + 0.5) / static_cast<double>(tail);
      const double q = std::abs(fit.k) < 1e-12 ? -fit.sigma * std::log1p(-p)
                                               : fit.sigma * std::expm1(-fit.k * std::log1p(-p)) / fit.k;
      const double lw = std::min(std::log(q + exp_cut), 0.0);  // truncate at the largest raw weight
      out.log_weights[static_cast<Eigen::Index>(order[s - tail + i])] = lw;
    }
  }
  return out;
}

Eigen::VectorXd log_predictive_density(const Eigen::MatrixXd& loglik) {
  Eigen::VectorXd out(loglik.cols());
  const double log_s = std::log(static_cast<double>(loglik.rows()));
  for (Eigen::Index i = 0; i < loglik.cols(); ++i) {
    const Eigen::VectorXd col = loglik.col(i);
    out[i] = stats::log_sum_exp({col.data(), static_cast<std::size_t>(col.size())}) - log_s;
  }
  return out;
}

LooReport loo(const Eigen::MatrixXd& loglik, const std::vector<int>& record_study,
              const std::vector<std::string>& study_labels) {
  const auto n = loglik.cols();
  if (loglik.rows() < 2) throw std::invalid_argument("LOO needs at least two draws");
  if (static_cast<Eigen::Index>(record_study.size()) != n) {
    throw std::invalid_argument("record_study does not match the log-likelihood columns");
  }
  LooReport rep;
  rep.record_study = record_study;
  rep.elpd_i.resize(n);
  rep.p_loo_i.resize(n);
  rep.pareto_k.resize(n);
  const Eigen::VectorXd lpd = log_predictive_density(loglik);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd ll = loglik.col(i);
    const auto ps = psis(-ll);
    const Eigen::VectorXd num = ps.log_weights + ll;
    const double elpd = stats::log_sum_exp({num.data(), static_cast<std::size_t>(num.size())}) -
                        stats::log_sum_exp({ps.log_weights.data(), static_cast<std::size_t>(num.size())});
    rep.elpd_i[i] = elpd;
    rep.p_loo_i[i] = lpd[i] - elpd;
    rep.pareto_k[i] = ps.pareto_k;
  }
  rep.per_study.resize(study_labels.size());
  for (std::size_t j = 0; j < study_labels.size(); ++j) rep.per_study[j].study = study_labels[j];
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& st = rep.per_study.at(static_cast<std::size_t>(record_study[static_cast<std::size_t>(i)]));
    st.elpd += rep.elpd_i[i];
    st.p_loo += rep.p_loo_i[i];
    ++st.records;
  }
  for (auto& st : rep.per_study) {
    st.looic = -2.0 * st.elpd;
    rep.elpd += st.elpd;
    rep.p_loo += st.p_loo;
  }
  rep.looic = -2.0 * rep.elpd;
  if (n > 1) {
    const double mean = rep.elpd_i.mean();
    const double var = (rep.elpd_i.array() - mean).square().sum() / static_cast<double>(n - 1);
    rep.se_looic = 2.0 * std::sqrt(static_cast<double>(n) * var);
  }
  rep.high_k = static_cast<int>((rep.pareto_k.array() > kParetoKThreshold).count());
  if (rep.high_k > 0) {
    std::ostringstream msg;
    msg << rep.high_k << " record(s) with Pareto k > " << kParetoKThreshold
        << "; the LOO estimate may be unreliable for them";
    rep.warnings.push_back(msg.str());
  }
  if (rep.p_loo < 0.0) rep.warnings.push_back("negative p_loo: possible model misspecification");
  return rep;
}

LooReport loo(const PosteriorDraws& draws, const SurvivalDataset& data) {
  if (draws.loglik.cols() != static_cast<Eigen::Index>(data.size())) {
    throw std::invalid_argument("draws carry no pointwise log-likelihood for this dataset");
  }
  std::vector<int> study;
  for (const auto& r : data.records()) study.push_back(r.study);
  return loo(draws.loglik, study, data.study_labels());
}

LooTable loo_comparison(const std::vector<std::string>& models, const std::vector<LooReport>& reports) {
  if (models.size() != reports.size() || models.empty()) {
    throw std::invalid_argument("need one LOO report per model name");
  }
  LooTable t;
  t.models = models;
  for (const auto& s : reports.front().per_study) t.rows.push_back(s.study);
  for (const auto& r : reports) {
    if (r.per_study.size() != reports.front().per_study.size()) {
      throw std::invalid_argument("LOO reports cover different studies");
    }
    for (std::size_t j = 0; j < r.per_study.size(); ++j) {
      if (r.per_study[j].study != t.rows[j]) throw std::invalid_argument("LOO reports cover different studies");
    }
  }
  t.rows.push_back("Total");
  t.rows.push_back("p_loo");
  t.values.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(models.size()));
  for (std::size_t m = 0; m < reports.size(); ++m) {
    const auto c = static_cast<Eigen::Index>(m);
    const auto& r = reports[m];
    for (std::size_t j = 0; j < r.per_study.size(); ++j) t.values(static_cast<Eigen::Index>(j), c) = r.per_study[j].looic;
    t.values(t.values.rows() - 2, c) = r.looic;
    t.values(t.values.rows() - 1, c) = r.p_loo;
  }
  return t;
}

// --- simulation ----------------------------------------------------------------

namespace {

class HazardEvaluator {
 public:
  explicit HazardEvaluator(const HazardSpec& h)
      : spec_(h), basis_(h.knots, h.kappa), row_(basis_.dim()), rate_(std::exp(h.eta)) {
    h.validate();
    basis_.mspline(h.knots.upper, row_);
    h_upper_ = rate_ * dot();
    basis_.ispline(h.knots.upper, row_);
    cum_upper_ = rate_ * dot();
  }
  double hazard(double t) {
    basis_.mspline(clamp(t), row_);
    return rate_ * dot();
  }
  double cumulative(double t) {
    if (t >= spec_.knots.upper) return cum_upper_ + h_upper_ * (t - spec_.knots.upper);
    basis_.ispline(clamp(t), row_);
    return rate_ * dot();
  }
  double invert(double target) {
    if (!(target > 0.0)) return spec_.knots.lower;
    if (target >= cum_upper_) {
      if (!(h_upper_ > 0.0)) return std::numeric_limits<double>::infinity();
      return spec_.knots.upper + (target - cum_upper_) / h_upper_;
    }
    std::uintmax_t iters = 200;
    const auto r = boost::math::tools::toms748_solve(
        [&](double t) { return cumulative(t) - target; }, spec_.knots.lower, spec_.knots.upper,
        -target, cum_upper_ - target, boost::math::tools::eps_tolerance<double>(50), iters);
    return 0.5 * (r.first + r.second);
  }

 private:
  double clamp(double t) const {
    if (t < spec_.knots.lower) throw std::out_of_range("time before the lower boundary knot");
    return std::min(t, spec_.knots.upper);
  }
  double dot() const {
    double s = 0.0;
    for (std::size_t i = 0; i < row_.size(); ++i) s += spec_.coefficients[static_cast<Eigen::Index>(i)] * row_[i];
    return s;
  }
  const HazardSpec& spec_;
  SplineBasis basis_;
  std::vector<double> row_;
  double rate_;
  double h_upper_ = 0.0, cum_upper_ = 0.0;
};

}  // namespace

void HazardSpec::validate() const {
  knots.validate();
  if (kappa < 1) throw std::invalid_argument("kappa must be >= 1");
  const auto dim = static_cast<Eigen::Index>(knots.num_internal()) + kappa;
  if (coefficients.size() != dim) {
    throw std::invalid_argument("hazard needs " + std::to_string(dim) + " spline coefficients");
  }
  if ((coefficients.array() < 0.0).any() || std::abs(coefficients.sum() - 1.0) > 1e-9) {
    throw std::invalid_argument("spline coefficients must lie on the simplex");
  }
  if (!std::isfinite(eta)) throw std::invalid_argument("non-finite linear predictor");
}

double HazardSpec::hazard(double t) const { return HazardEvaluator(*this).hazard(t); }
double HazardSpec::cumulative_hazard(double t) const { return HazardEvaluator(*this).cumulative(t); }
double HazardSpec::quantile_time(double u) const {
  if (!(u > 0.0 && u <= 1.0)) throw std::invalid_argument("survival level must lie in (0, 1]");
  return HazardEvaluator(*this).invert(-std::log(u));
}

HazardSpec HazardSpec::constant(double rate, double upper) {
  if (!(rate > 0.0) || !(upper > 0.0)) throw std::invalid_argument("need rate > 0 and upper > 0");
  HazardSpec h;
  h.knots = KnotVector(0.0, {}, upper);
  h.kappa = 1;
  h.coefficients = Eigen::VectorXd::Ones(1);
  h.eta = std::log(rate * upper);
  return h;
}

std::vector<SurvivalRecord> simulate_survival(const HazardSpec& hazard, int n, Rng& rng,
                                              double admin_censor, int study, int treatment) {
  if (n < 0) throw std::invalid_argument("n must be >= 0");
  if (!(admin_censor > 0.0)) throw std::invalid_argument("administrative censoring time must be > 0");
  HazardEvaluator eval(hazard);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<SurvivalRecord> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double u = unif(rng);
    while (u <= 0.0) u = unif(rng);
    const double t = eval.invert(-std::log(u));
    const bool event = t <= admin_censor && t > 0.0;
    out.push_back({study, treatment, event ? t : admin_censor, event});
  }
  return out;
}

std::vector<SurvivalRecord> simulate_survival(const HazardSpec& hazard, int n, std::uint64_t seed,
                                              double admin_censor, int study, int treatment) {
  Rng rng = make_rng(seed, 0);
  return simulate_survival(hazard, n, rng, admin_censor, study, treatment);
}

// --- multivariate normal export --------------------------------------------------

MvnExport export_mvn(const NmaModel& model, const PosteriorDraws& draws, int study,
                     const std::vector<int>& treatments, const std::vector<double>& grid,
                     const Eigen::VectorXd& x_centred) {
  if (model.spec().family == Family::StratifiedNph) {
    throw std::invalid_argument("MVN export needs the ph or nph_coef family");
  }
  const auto n = draws.draws.rows();
  if (n < 2) throw std::invalid_argument("degenerate covariance: MVN export needs at least two draws");
  const auto& data = model.data();
  MvnExport out;
  out.grid = grid;
  const auto gb = grid_basis(model.basis(study), grid);
  out.basis = gb.i + gb.m.cwiseProduct(gb.extra.replicate(1, gb.m.cols()));
  for (int k : treatments) {
    check_arm(model, study, k);
    const int nc = model.num_coefficients(study);
    Eigen::MatrixXd x(n, nc + 1);
    for (Eigen::Index s = 0; s < n; ++s) {
      const Eigen::VectorXd theta = draws.draws.row(s).transpose();
      x.row(s).head(nc) = model.coefficient_logits(theta, study, k, x_centred).transpose();
      x(s, nc) = model.linear_predictor(theta, study, k, x_centred);
    }
    MvnBlock b;
    b.population = data.study_labels()[static_cast<std::size_t>(study)];
    b.treatment = data.treatment_labels()[static_cast<std::size_t>(k)];
    for (int c = 0; c < nc; ++c) b.names.push_back("alpha_star[" + std::to_string(c + 2) + "]");
    b.names.push_back("eta");
    b.mean = x.colwise().mean().transpose();
    const Eigen::MatrixXd centred = x.rowwise() - b.mean.transpose();
    b.covariance = centred.transpose() * centred / static_cast<double>(n - 1);
    const double scale = b.covariance.diagonal().maxCoeff();
    if (!(scale > 0.0)) {
      throw std::invalid_argument("degenerate covariance for treatment '" + b.treatment +
                                  "': all draws are identical");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(b.covariance, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() <= 1e-12 * scale) {
      b.ridge = 1e-8 * scale;
      b.covariance.diagonal().array() += b.ridge;
      std::ostringstream note;
      note << "covariance for " << b.population << "/" << b.treatment
           << " is rank deficient; ridge " << b.ridge << " added to the diagonal";
      out.notes.push_back(note.str());
    }
    out.blocks.push_back(std::move(b));
  }
  return out;
}

MvnValidation validate_mvn(const MvnExport& bundle, const NmaModel& model, const PosteriorDraws& draws,
                           int study, const std::vector<int>& treatments, int n, std::uint64_t seed,
                           const Eigen::VectorXd& x_centred) {
  if (treatments.size() != bundle.blocks.size()) throw std::invalid_argument("one treatment per block");
  MvnValidation out;
  std::normal_distribution<double> norm;
  for (std::size_t b = 0; b < bundle.blocks.size(); ++b) {
    const auto& blk = bundle.blocks[b];
    Rng rng = make_rng(seed, b);
    Eigen::LLT<Eigen::MatrixXd> llt(blk.covariance);
    if (llt.info() != Eigen::Success) throw std::runtime_error("export covariance is not positive definite");
    const Eigen::MatrixXd lower = llt.matrixL();
    const auto dim = blk.mean.size();
    Eigen::MatrixXd surv(n, static_cast<Eigen::Index>(bundle.grid.size()));
    Eigen::VectorXd z(dim);
    for (int s = 0; s < n; ++s) {
      for (Eigen::Index i = 0; i < dim; ++i) z[i] = norm(rng);
      const Eigen::VectorXd v = blk.mean + lower * z;
      const Eigen::VectorXd a = softmax({v.data(), static_cast<std::size_t>(dim - 1)});
      surv.row(s) = (-(bundle.basis * a).array() * std::exp(v[dim - 1])).exp().matrix().transpose();
    }
    const auto exact = evaluate_arm(model, draws.draws, study, treatments[b], bundle.grid, x_centred);
    double worst = 0.0;
    for (Eigen::Index g = 0; g < surv.cols(); ++g) {
      const Eigen::VectorXd a = surv.col(g), e = exact.survival.col(g);
      const double ma = stats::quantile({a.data(), a.data() + a.size()}, 0.5);
      const double me = stats::quantile({e.data(), e.data() + e.size()}, 0.5);
      worst = std::max(worst, std::abs(ma - me));
    }
    out.per_block.push_back(worst);
    out.max_median_gap = std::max(out.max_median_gap, worst);
  }
  return out;
}

}  // namespace survnma
