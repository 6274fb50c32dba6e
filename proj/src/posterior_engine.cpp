#include "survnma/posterior_engine.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <boost/math/distributions/normal.hpp>
#include <unsupported/Eigen/FFT>

#include "survnma/stats.hpp"

namespace survnma {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kMaxDeltaH = 1000.0;

double log_sum_exp2(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Position, momentum, and the cached log density / gradient at the position.
struct PhasePoint {
  Eigen::VectorXd q, p, grad;
  double lp = -kInf;
};

// Euclidean kinetic energy with a diagonal or dense inverse metric.
class Metric {
 public:
  explicit Metric(std::size_t dim) : diag_(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(dim))) {}

  void set_diag(const Eigen::VectorXd& inv) {
    diag_ = inv;
    dense_.resize(0, 0);
  }
  void set_dense(const Eigen::MatrixXd& inv) {
    dense_ = inv;
    Eigen::LLT<Eigen::MatrixXd> llt(inv);
    if (llt.info() != Eigen::Success) throw std::runtime_error("inverse metric not positive definite");
    upper_ = llt.matrixU();
  }
  bool dense() const { return dense_.size() > 0; }
  const Eigen::VectorXd& diag() const { return diag_; }
  const Eigen::MatrixXd& dense_matrix() const { return dense_; }

  Eigen::VectorXd velocity(const Eigen::VectorXd& p) const {
    return dense() ? Eigen::VectorXd(dense_ * p) : Eigen::VectorXd(diag_.cwiseProduct(p));
  }
  double kinetic(const Eigen::VectorXd& p) const { return 0.5 * p.dot(velocity(p)); }

  void sample_p(Eigen::VectorXd& p, Rng& rng) const {
    std::normal_distribution<double> norm;
    Eigen::VectorXd z(diag_.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = norm(rng);
    if (dense()) {
      p = upper_.triangularView<Eigen::Upper>().solve(z);
    } else {
      p = z.cwiseQuotient(diag_.cwiseSqrt());
    }
  }

 private:
  Eigen::VectorXd diag_;
  Eigen::MatrixXd dense_;
  Eigen::MatrixXd upper_;
};

class DualAveraging {
 public:
  DualAveraging(double delta) : delta_(delta) {}
  void restart(double step) {
    counter_ = 0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
    mu_ = std::log(10.0 * step);
  }
  double learn(double accept) {
    ++counter_;
    accept = std::min(1.0, accept);
    const double eta = 1.0 / (counter_ + kT0);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept);
    const double x = mu_ - s_bar_ * std::sqrt(static_cast<double>(counter_)) / kGamma;
    const double x_eta = std::pow(static_cast<double>(counter_), -kKappa);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    return std::exp(x);
  }
  double final_step() const { return std::exp(x_bar_); }

 private:
  static constexpr double kGamma = 0.05, kT0 = 10.0, kKappa = 0.75;
  double delta_;
  double mu_ = 0.0, s_bar_ = 0.0, x_bar_ = 0.0;
  int counter_ = 0;
};

// Stan-style expanding windows for metric adaptation.
class Windows {
 public:
  explicit Windows(int warmup) : warmup_(warmup) {
    if (warmup < 20) {
      enabled_ = false;
      return;
    }
    if (init_ + term_ + base_ > warmup) {
      init_ = static_cast<int>(0.15 * warmup);
      term_ = static_cast<int>(0.1 * warmup);
      base_ = warmup - (init_ + term_);
    }
    size_ = base_;
    next_ = init_ + size_ - 1;
  }
  bool enabled() const { return enabled_; }
  bool in_window() const {
    return enabled_ && counter_ >= init_ && counter_ < warmup_ - term_ && counter_ != warmup_;
  }
  bool at_window_end() const { return enabled_ && counter_ == next_ && counter_ != warmup_; }
  void advance_window() {
    if (next_ == warmup_ - term_ - 1) return;
    size_ *= 2;
    next_ = counter_ + size_;
    if (next_ != warmup_ - term_ - 1 && next_ + 2 * size_ >= warmup_ - term_) {
      next_ = warmup_ - term_ - 1;
    }
  }
  void tick() { ++counter_; }

 private:
  int warmup_;
  bool enabled_ = true;
  int init_ = 75, term_ = 50, base_ = 25;
  int size_ = 0, next_ = 0, counter_ = 0;
};

// Welford accumulator for the metric estimate.
class MomentEstimator {
 public:
  explicit MomentEstimator(std::size_t dim, bool dense) : dense_(dense) {
    const auto n = static_cast<Eigen::Index>(dim);
    mean_ = Eigen::VectorXd::Zero(n);
    if (dense) m2_dense_ = Eigen::MatrixXd::Zero(n, n);
    else m2_ = Eigen::VectorXd::Zero(n);
  }
  void add(const Eigen::VectorXd& q) {
    ++n_;
    const Eigen::VectorXd delta = q - mean_;
    mean_ += delta / static_cast<double>(n_);
    if (dense_) m2_dense_ += (q - mean_) * delta.transpose();
    else m2_ += (q - mean_).cwiseProduct(delta);
  }
  int count() const { return n_; }
  Eigen::VectorXd variance() const {
    const double n = n_;
    const Eigen::VectorXd v = m2_ / (n - 1.0);
    return (n / (n + 5.0)) * v + Eigen::VectorXd::Constant(v.size(), 1e-3 * 5.0 / (n + 5.0));
  }
  Eigen::MatrixXd covariance() const {
    const double n = n_;
    const Eigen::MatrixXd c = m2_dense_ / (n - 1.0);
    return (n / (n + 5.0)) * c +
           1e-3 * (5.0 / (n + 5.0)) * Eigen::MatrixXd::Identity(c.rows(), c.cols());
  }
  void restart() {
    n_ = 0;
    mean_.setZero();
    if (dense_) m2_dense_.setZero();
    else m2_.setZero();
  }

 private:
  bool dense_;
  int n_ = 0;
  Eigen::VectorXd mean_, m2_;
  Eigen::MatrixXd m2_dense_;
};

struct Transition {
  double accept_stat = 0.0;
  int depth = 0;
  int n_leapfrog = 0;
  bool divergent = false;
};

class Nuts {
 public:
  Nuts(const SamplingTarget& target, const SamplerConfig& config, Rng& rng)
      : target_(target), config_(config), rng_(rng), metric_(target.dim) {}

  Metric& metric() { return metric_; }
  double step = 1.0;

  void evaluate(PhasePoint& z) const {
    z.grad.resize(static_cast<Eigen::Index>(target_.dim));
    try {
      z.lp = target_.log_density(z.q, &z.grad);
    } catch (const NonFiniteError&) {
      z.lp = -kInf;
    }
    if (!std::isfinite(z.lp) || !z.grad.allFinite()) z.lp = -kInf;
  }

  double hamiltonian(const PhasePoint& z) const {
    if (!std::isfinite(z.lp)) return kInf;
    return -z.lp + metric_.kinetic(z.p);
  }

  void leapfrog(PhasePoint& z, double eps) const {
    z.p += 0.5 * eps * z.grad;
    z.q += eps * metric_.velocity(z.p);
    evaluate(z);
    if (std::isfinite(z.lp)) z.p += 0.5 * eps * z.grad;
  }

  // Heuristic initial step size: double or halve until the one-step acceptance
  // crosses 0.8.
  void init_step(const PhasePoint& start) {
    PhasePoint z = start;
    metric_.sample_p(z.p, rng_);
    double h0 = hamiltonian(z);
    leapfrog(z, step);
    double h = hamiltonian(z);
    if (std::isnan(h)) h = kInf;
    const int direction = h0 - h > std::log(0.8) ? 1 : -1;
    for (int iter = 0; iter < 200; ++iter) {
      z = start;
      metric_.sample_p(z.p, rng_);
      h0 = hamiltonian(z);
      leapfrog(z, step);
      h = hamiltonian(z);
      if (std::isnan(h)) h = kInf;
      const double dh = h0 - h;
      if (direction == 1 && !(dh > std::log(0.8))) break;
      if (direction == -1 && !(dh < std::log(0.8))) break;
      step = direction == 1 ? 2.0 * step : 0.5 * step;
      if (step > 1e7) throw std::runtime_error("step size search diverged: posterior may be improper");
      if (step == 0.0) throw std::runtime_error("step size fell to zero: check the model gradient");
    }
  }

  Transition transition(PhasePoint& current) {
    metric_.sample_p(current.p, rng_);
    PhasePoint z = current;
    PhasePoint z_fwd = z, z_bck = z, z_sample = z, z_propose = z;

    Eigen::VectorXd p_sharp0 = metric_.velocity(z.p);
    Eigen::VectorXd p_fwd_fwd = z.p, p_sharp_fwd_fwd = p_sharp0;
    Eigen::VectorXd p_fwd_bck = z.p, p_sharp_fwd_bck = p_sharp0;
    Eigen::VectorXd p_bck_fwd = z.p, p_sharp_bck_fwd = p_sharp0;
    Eigen::VectorXd p_bck_bck = z.p, p_sharp_bck_bck = p_sharp0;
    Eigen::VectorXd rho = z.p;
    double log_sum_weight = 0.0;
    const double h0 = hamiltonian(z);
    Transition t;
    double sum_metro = 0.0;
    divergent_ = false;
    n_leapfrog_ = 0;

    const auto n = z.p.size();
    while (t.depth < config_.max_depth) {
      Eigen::VectorXd rho_fwd = Eigen::VectorXd::Zero(n), rho_bck = Eigen::VectorXd::Zero(n);
      double lsw_subtree = -kInf;
      bool valid = false;
      if (unif_(rng_) > 0.5) {
        z = z_fwd;
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        p_sharp_bck_fwd = p_sharp_fwd_bck;
        valid = build_tree(t.depth, z, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd, rho_fwd,
                           p_fwd_bck, p_fwd_fwd, h0, 1.0, lsw_subtree, sum_metro);
        z_fwd = z;
      } else {
        z = z_bck;
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        p_sharp_fwd_bck = p_sharp_bck_fwd;
        valid = build_tree(t.depth, z, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck, rho_bck,
                           p_bck_fwd, p_bck_bck, h0, -1.0, lsw_subtree, sum_metro);
        z_bck = z;
      }
      if (!valid) break;
      ++t.depth;
      if (lsw_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (unif_(rng_) < std::exp(lsw_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp2(log_sum_weight, lsw_subtree);

      rho = rho_bck + rho_fwd;
      bool persist = criterion(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
      persist = persist && criterion(p_sharp_bck_bck, p_sharp_fwd_bck, rho_bck + p_fwd_bck);
      persist = persist && criterion(p_sharp_bck_fwd, p_sharp_fwd_fwd, rho_fwd + p_bck_fwd);
      if (!persist) break;
    }
    t.n_leapfrog = n_leapfrog_;
    t.divergent = divergent_;
    t.accept_stat = n_leapfrog_ > 0 ? sum_metro / n_leapfrog_ : 0.0;
    current = z_sample;
    return t;
  }

 private:
  static bool criterion(const Eigen::VectorXd& p_sharp_minus, const Eigen::VectorXd& p_sharp_plus,
                        const Eigen::VectorXd& rho) {
    return p_sharp_plus.dot(rho) > 0.0 && p_sharp_minus.dot(rho) > 0.0;
  }

  bool build_tree(int depth, PhasePoint& z, PhasePoint& z_propose, Eigen::VectorXd& p_sharp_beg,
                  Eigen::VectorXd& p_sharp_end, Eigen::VectorXd& rho, Eigen::VectorXd& p_beg,
                  Eigen::VectorXd& p_end, double h0, double sign, double& log_sum_weight,
                  double& sum_metro) {
    if (depth == 0) {
      leapfrog(z, sign * step);
      ++n_leapfrog_;
      double h = hamiltonian(z);
      if (std::isnan(h)) h = kInf;
      if (h - h0 > kMaxDeltaH) divergent_ = true;
      log_sum_weight = log_sum_exp2(log_sum_weight, h0 - h);
      sum_metro += h0 - h > 0.0 ? 1.0 : std::exp(h0 - h);
      z_propose = z;
      p_sharp_beg = metric_.velocity(z.p);
      p_sharp_end = p_sharp_beg;
      rho += z.p;
      p_beg = z.p;
      p_end = p_beg;
      return !divergent_;
    }
    const auto n = z.p.size();
    double lsw_init = -kInf;
    Eigen::VectorXd p_init_end(n), p_sharp_init_end(n), rho_init = Eigen::VectorXd::Zero(n);
    if (!build_tree(depth - 1, z, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg,
                    p_init_end, h0, sign, lsw_init, sum_metro)) {
      return false;
    }
    PhasePoint z_propose_final = z;
    double lsw_final = -kInf;
    Eigen::VectorXd p_final_beg(n), p_sharp_final_beg(n), rho_final = Eigen::VectorXd::Zero(n);
    if (!build_tree(depth - 1, z, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final,
                    p_final_beg, p_end, h0, sign, lsw_final, sum_metro)) {
      return false;
    }
    const double lsw_subtree = log_sum_exp2(lsw_init, lsw_final);
    log_sum_weight = log_sum_exp2(log_sum_weight, lsw_subtree);
    if (lsw_final > lsw_subtree) {
      z_propose = z_propose_final;
    } else if (unif_(rng_) < std::exp(lsw_final - lsw_subtree)) {
      z_propose = z_propose_final;
    }
    const Eigen::VectorXd rho_subtree = rho_init + rho_final;
    rho += rho_subtree;
    bool persist = criterion(p_sharp_beg, p_sharp_end, rho_subtree);
    persist = persist && criterion(p_sharp_beg, p_sharp_final_beg, rho_init + p_final_beg);
    persist = persist && criterion(p_sharp_init_end, p_sharp_end, rho_final + p_init_end);
    return persist;
  }

  const SamplingTarget& target_;
  const SamplerConfig& config_;
  Rng& rng_;
  Metric metric_;
  std::uniform_real_distribution<double> unif_{0.0, 1.0};
  bool divergent_ = false;
  int n_leapfrog_ = 0;
};

struct ChainResult {
  Eigen::MatrixXd draws;
  Eigen::VectorXd lp, accept;
  Eigen::VectorXi depth, leapfrog, divergent;
  ChainAdaptation adaptation;
  std::vector<std::string> warnings;
  std::exception_ptr error;
};

PhasePoint initialise(const SamplingTarget& target, const SamplerConfig& config, Rng& rng,
                      const Nuts& nuts, int chain) {
  PhasePoint z;
  for (int attempt = 0; attempt <= 100; ++attempt) {
    if (target.initial_point) {
      z.q = target.initial_point(rng, config.init_radius);
    } else {
      std::uniform_real_distribution<double> unif(-config.init_radius, config.init_radius);
      z.q.resize(static_cast<Eigen::Index>(target.dim));
      for (Eigen::Index i = 0; i < z.q.size(); ++i) z.q[i] = unif(rng);
    }
    nuts.evaluate(z);
    if (std::isfinite(z.lp)) return z;
  }
  throw std::runtime_error("chain " + std::to_string(chain + 1) +
                           ": no finite log density and gradient after 100 jittered initialisations");
}

ChainResult run_chain(const SamplingTarget& target, const SamplerConfig& config, int chain) {
  ChainResult out;
  try {
    Rng rng = make_rng(config.seed, static_cast<std::uint64_t>(chain));
    Nuts nuts(target, config, rng);
    PhasePoint z = initialise(target, config, rng, nuts, chain);
    if (config.gradient_check) {
      const double err = gradient_check(target.log_density, z.q);
      if (!(err <= 1e-4)) {
        std::ostringstream msg;
        msg << "chain " << chain + 1 << ": analytic gradient disagrees with finite differences "
            << "at the initial point (relative error " << err << ")";
        throw std::runtime_error(msg.str());
      }
    }

    const auto dim = static_cast<Eigen::Index>(target.dim);
    DualAveraging da(config.target_accept);
    Windows windows(config.warmup);
    MomentEstimator moments(target.dim, config.dense_metric);
    if (config.warmup > 0) nuts.init_step(z);
    da.restart(nuts.step);

    for (int it = 0; it < config.warmup; ++it) {
      const auto t = nuts.transition(z);
      nuts.step = da.learn(t.accept_stat);
      if (windows.in_window()) moments.add(z.q);
      if (windows.at_window_end()) {
        windows.advance_window();
        if (config.dense_metric) nuts.metric().set_dense(moments.covariance());
        else nuts.metric().set_diag(moments.variance());
        moments.restart();
        nuts.init_step(z);
        da.restart(nuts.step);
      }
      windows.tick();
    }
    if (config.warmup > 0) nuts.step = da.final_step();

    out.draws.resize(config.sampling, dim);
    out.lp.resize(config.sampling);
    out.accept.resize(config.sampling);
    out.depth.resize(config.sampling);
    out.leapfrog.resize(config.sampling);
    out.divergent.resize(config.sampling);
    for (int it = 0; it < config.sampling; ++it) {
      const auto t = nuts.transition(z);
      out.draws.row(it) = z.q.transpose();
      out.lp[it] = z.lp;
      out.accept[it] = t.accept_stat;
      out.depth[it] = t.depth;
      out.leapfrog[it] = t.n_leapfrog;
      out.divergent[it] = t.divergent ? 1 : 0;
    }
    out.adaptation.step_size = nuts.step;
    out.adaptation.inv_metric_diag = nuts.metric().diag();
    if (nuts.metric().dense()) out.adaptation.inv_metric_dense = nuts.metric().dense_matrix();

    const int hits = static_cast<int>((out.depth.array() >= config.max_depth).count());
    if (config.sampling > 0 && hits > config.sampling / 4) {
      std::ostringstream msg;
      msg << "WARNING: chain " << chain + 1 << " hit the maximum tree depth (" << config.max_depth
          << ") on " << hits << " of " << config.sampling
          << " iterations; consider a larger max_depth or reparameterising";
      out.warnings.push_back(msg.str());
    }
  } catch (...) {
    out.error = std::current_exception();
  }
  return out;
}

}  // namespace

void SamplerConfig::validate() const {
  if (chains < 1) throw std::invalid_argument("chains must be >= 1");
  if (warmup < 0 || sampling < 1) throw std::invalid_argument("need warmup >= 0 and sampling >= 1");
  if (!(target_accept > 0.0 && target_accept < 1.0)) {
    throw std::invalid_argument("target acceptance must lie in (0, 1)");
  }
  if (max_depth < 1) throw std::invalid_argument("max tree depth must be >= 1");
  if (!(init_radius >= 0.0)) throw std::invalid_argument("init radius must be >= 0");
}

SamplingTarget model_target(const NmaModel& model) {
  SamplingTarget t;
  t.dim = model.dim();
  t.log_density = [&model](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    return model.log_posterior(x, g);
  };
  t.initial_point = [&model](Rng& rng, double radius) { return model.initial_point(rng, radius); };
  t.names = model.layout().coordinate_names();
  return t;
}

double gradient_check(const LogDensityFn& f, const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  f(x, &g);
  Eigen::VectorXd t = x;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    t[i] = x[i] + h;
    const double up = f(t, nullptr);
    t[i] = x[i] - h;
    const double down = f(t, nullptr);
    t[i] = x[i];
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(g[i] - fd) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

PosteriorDraws sample(const SamplingTarget& target, const SamplerConfig& config) {
  config.validate();
  if (target.dim == 0) throw std::invalid_argument("target has no parameters");
  std::vector<ChainResult> results(static_cast<std::size_t>(config.chains));
  unsigned threads = config.threads > 0 ? static_cast<unsigned>(config.threads)
                                        : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(config.chains));
  if (threads <= 1) {
    for (int c = 0; c < config.chains; ++c) results[static_cast<std::size_t>(c)] = run_chain(target, config, c);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&] {
        for (int c = next++; c < config.chains; c = next++) {
          results[static_cast<std::size_t>(c)] = run_chain(target, config, c);
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (const auto& r : results) {
    if (r.error) std::rethrow_exception(r.error);
  }

  PosteriorDraws out;
  out.names = target.names;
  if (out.names.empty()) {
    for (std::size_t i = 0; i < target.dim; ++i) out.names.push_back("x[" + std::to_string(i + 1) + "]");
  }
  out.chains = config.chains;
  out.iterations = config.sampling;
  const Eigen::Index rows = static_cast<Eigen::Index>(config.chains) * config.sampling;
  out.draws.resize(rows, static_cast<Eigen::Index>(target.dim));
  out.lp.resize(rows);
  out.accept_stat.resize(rows);
  out.treedepth.resize(rows);
  out.n_leapfrog.resize(rows);
  out.divergent.resize(rows);
  for (int c = 0; c < config.chains; ++c) {
    const auto& r = results[static_cast<std::size_t>(c)];
    const Eigen::Index at = out.row(c, 0);
    out.draws.middleRows(at, config.sampling) = r.draws;
    out.lp.segment(at, config.sampling) = r.lp;
    out.accept_stat.segment(at, config.sampling) = r.accept;
    out.treedepth.segment(at, config.sampling) = r.depth;
    out.n_leapfrog.segment(at, config.sampling) = r.leapfrog;
    out.divergent.segment(at, config.sampling) = r.divergent;
    out.adaptation.push_back(r.adaptation);
    out.warnings.insert(out.warnings.end(), r.warnings.begin(), r.warnings.end());
  }
  if (const int nd = out.num_divergent(); nd > 0) {
    out.warnings.push_back(std::to_string(nd) + " divergent transitions after warmup");
  }
  return out;
}

PosteriorDraws sample(const NmaModel& model, const SamplerConfig& config) {
  auto out = sample(model_target(model), config);
  out.loglik.resize(out.draws.rows(), static_cast<Eigen::Index>(model.num_records()));
  for (Eigen::Index r = 0; r < out.draws.rows(); ++r) {
    out.loglik.row(r) = model.pointwise_loglik(out.draws.row(r).transpose()).transpose();
  }
  return out;
}

Eigen::MatrixXd PosteriorDraws::chain_matrix(Eigen::Index param) const {
  Eigen::MatrixXd m(iterations, chains);
  for (int c = 0; c < chains; ++c) {
    m.col(c) = draws.col(param).segment(row(c, 0), iterations);
  }
  return m;
}

// --- diagnostics -------------------------------------------------------------

namespace {

// Splits each chain in half (dropping a middle draw for odd lengths).
Eigen::MatrixXd split_chains(const Eigen::MatrixXd& x) {
  const Eigen::Index n = x.rows() / 2;
  Eigen::MatrixXd out(n, 2 * x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    out.col(2 * c) = x.col(c).head(n);
    out.col(2 * c + 1) = x.col(c).tail(n);
  }
  return out;
}

// Normal scores of average ranks, (r - 3/8) / (S + 1/4).
Eigen::MatrixXd rank_normalise(const Eigen::MatrixXd& x) {
  const Eigen::Index s = x.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(s));
  std::iota(order.begin(), order.end(), 0);
  const double* v = x.data();
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return v[a] < v[b]; });
  Eigen::MatrixXd out(x.rows(), x.cols());
  const boost::math::normal normal;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    const double z = boost::math::quantile(normal, (rank - 0.375) / (static_cast<double>(s) + 0.25));
    for (std::size_t k = i; k <= j; ++k) out.data()[order[k]] = z;
    i = j + 1;
  }
  return out;
}

std::optional<double> rhat_basic(const Eigen::MatrixXd& x) {
  const double n = static_cast<double>(x.rows());
  const Eigen::Index m = x.cols();
  Eigen::VectorXd means(m), vars(m);
  for (Eigen::Index c = 0; c < m; ++c) {
    means[c] = x.col(c).mean();
    vars[c] = (x.col(c).array() - means[c]).square().sum() / (n - 1.0);
  }
  const double w = vars.mean();
  if (!(w > 0.0) || !std::isfinite(w)) return std::nullopt;
  const double b = n * (means.array() - means.mean()).square().sum() / static_cast<double>(m - 1);
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

// Biased autocovariance of one chain via FFT.
Eigen::VectorXd autocovariance(const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size();
  Eigen::Index len = 1;
  while (len < 2 * n) len <<= 1;
  std::vector<double> padded(static_cast<std::size_t>(len), 0.0);
  const double mean = x.mean();
  for (Eigen::Index i = 0; i < n; ++i) padded[static_cast<std::size_t>(i)] = x[i] - mean;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, padded);
  for (auto& f : freq) f = std::norm(f);
  std::vector<double> back;
  fft.inv(back, freq);
  Eigen::VectorXd ac(n);
  for (Eigen::Index i = 0; i < n; ++i) ac[i] = back[static_cast<std::size_t>(i)] / static_cast<double>(n);
  return ac;
}

}  // namespace

double ess_basic(const Eigen::MatrixXd& x) {
  const Eigen::Index n = x.rows(), m = x.cols();
  if (n < 4) return std::numeric_limits<double>::quiet_NaN();
  std::vector<Eigen::VectorXd> acov;
  Eigen::VectorXd means(m), vars(m);
  for (Eigen::Index c = 0; c < m; ++c) {
    acov.push_back(autocovariance(x.col(c)));
    means[c] = x.col(c).mean();
    vars[c] = acov.back()[0] * static_cast<double>(n) / static_cast<double>(n - 1);
  }
  const double mean_var = vars.mean();
  if (!(mean_var > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  double var_plus = mean_var * static_cast<double>(n - 1) / static_cast<double>(n);
  if (m > 1) var_plus += (means.array() - means.mean()).square().sum() / static_cast<double>(m - 1);
  auto mean_acov = [&](Eigen::Index t) {
    double s = 0.0;
    for (const auto& a : acov) s += a[t];
    return s / static_cast<double>(m);
  };
  Eigen::VectorXd rho = Eigen::VectorXd::Zero(n);
  double rho_even = 1.0;
  double rho_odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
  rho[0] = rho_even;
  rho[1] = rho_odd;
  Eigen::Index t = 1;
  while (t < n - 5 && rho_even + rho_odd > 0.0) {
    rho_even = 1.0 - (mean_var - mean_acov(t + 1)) / var_plus;
    rho_odd = 1.0 - (mean_var - mean_acov(t + 2)) / var_plus;
    if (rho_even + rho_odd >= 0.0) {
      rho[t + 1] = rho_even;
      rho[t + 2] = rho_odd;
    }
    t += 2;
  }
  const Eigen::Index max_t = t;
  if (rho_even > 0.0) rho[max_t + 1] = rho_even;
  t = 1;
  while (t <= max_t - 3) {
    if (rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]) {
      rho[t + 1] = 0.5 * (rho[t - 1] + rho[t]);
      rho[t + 2] = rho[t + 1];
    }
    t += 2;
  }
  const double total = static_cast<double>(n * m);
  double tau = -1.0 + 2.0 * rho.head(max_t + 1).sum() + rho[max_t + 1];
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

std::optional<double> split_rhat(const Eigen::MatrixXd& chains) {
  const auto split = split_chains(chains);
  const auto bulk = rhat_basic(rank_normalise(split));
  const double med = stats::quantile(std::vector<double>(split.data(), split.data() + split.size()), 0.5);
  const Eigen::MatrixXd folded = (split.array() - med).abs();
  const auto tail = rhat_basic(rank_normalise(folded));
  if (!bulk || !tail) return std::nullopt;
  return std::max(*bulk, *tail);
}

double ess_bulk(const Eigen::MatrixXd& chains) {
  const auto split = split_chains(chains);
  if (!rhat_basic(split)) return std::numeric_limits<double>::quiet_NaN();
  return ess_basic(rank_normalise(split));
}

double ess_tail(const Eigen::MatrixXd& chains) {
  const auto split = split_chains(chains);
  std::vector<double> all(split.data(), split.data() + split.size());
  std::sort(all.begin(), all.end());
  double worst = std::numeric_limits<double>::infinity();
  for (double p : {0.05, 0.95}) {
    const double q = stats::quantile_sorted(all, p);
    const Eigen::MatrixXd ind = (split.array() <= q).cast<double>();
    const double e = ess_basic(ind);
    if (std::isnan(e)) return e;
    worst = std::min(worst, e);
  }
  return worst;
}

int DiagnosticsReport::num_flagged() const {
  return static_cast<int>(std::count_if(parameters.begin(), parameters.end(),
                                        [](const auto& p) { return p.flagged; }));
}

DiagnosticsReport diagnostics(const PosteriorDraws& draws, int max_depth) {
  DiagnosticsReport rep;
  rep.divergences = draws.num_divergent();
  rep.max_treedepth_hits = static_cast<int>((draws.treedepth.array() >= max_depth).count());
  rep.total_draws = static_cast<int>(draws.num_draws());
  const bool enough = draws.chains >= 2 && draws.iterations >= 100;
  if (!enough) {
    rep.warnings.push_back("R-hat needs at least 2 chains of 100 draws; not computed");
  }
  for (Eigen::Index p = 0; p < draws.draws.cols(); ++p) {
    ParameterDiagnostics d;
    d.name = p < static_cast<Eigen::Index>(draws.names.size()) ? draws.names[static_cast<std::size_t>(p)]
                                                               : "x[" + std::to_string(p + 1) + "]";
    std::vector<double> v(draws.draws.col(p).data(), draws.draws.col(p).data() + draws.draws.rows());
    d.mean = stats::mean(v);
    d.sd = v.size() > 1 ? std::sqrt(stats::variance(v)) : 0.0;
    std::sort(v.begin(), v.end());
    d.q05 = stats::quantile_sorted(v, 0.05);
    d.q50 = stats::quantile_sorted(v, 0.5);
    d.q95 = stats::quantile_sorted(v, 0.95);
    if (enough) {
      const auto m = draws.chain_matrix(p);
      d.rhat = split_rhat(m);
      d.ess_bulk = ess_bulk(m);
      d.ess_tail = ess_tail(m);
      if (d.rhat) {
        d.flagged = *d.rhat > 1.01;
      } else {
        // Constant within chains: fine only if all chains agree.
        d.flagged = (m.array() != m(0, 0)).any();
      }
    }
    rep.parameters.push_back(std::move(d));
  }
  if (const int f = rep.num_flagged(); f > 0) {
    rep.warnings.push_back(std::to_string(f) + " parameter(s) with R-hat > 1.01");
  }
  if (rep.divergences > 0) {
    rep.warnings.push_back(std::to_string(rep.divergences) + " divergent transitions");
  }
  return rep;
}

}  // namespace survnma
