#include "survnma/commands.hpp"

#include <algorithm>
#include <chrono>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>

#include "survnma/cli_io.hpp"

namespace survnma {

namespace fs = std::filesystem;

namespace {

std::ostream& log_of(const CommandOptions& o) { return o.log ? *o.log : std::cerr; }

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

std::string config_hash(const RunConfig& c) { return sha256_hex(config_to_json(c).dump()); }

RunConfig base_config(const CommandOptions& o) {
  RunConfig c = o.config ? load_config(*o.config) : RunConfig{};
  if (o.seed) c.sampler.seed = *o.seed;
  if (o.chains) c.sampler.chains = *o.chains;
  if (o.iter_warmup) c.sampler.warmup = *o.iter_warmup;
  if (o.iter_sampling) c.sampler.sampling = *o.iter_sampling;
  if (o.threads) c.sampler.threads = *o.threads;
  if (o.grid_max) c.grid_max = *o.grid_max;
  if (o.population) c.population = *o.population;
  if (!o.treatments.empty()) c.treatments = o.treatments;
  c.sampler.validate();
  return c;
}

struct LoadedData {
  SurvivalDataset data;
  std::string sha256;
  std::string path;
};

LoadedData load_data(const fs::path& path, const RunConfig& c, std::ostream& log) {
  const std::string bytes = read_file(path);
  IngestOptions io;
  io.reference = c.reference_treatment;
  auto res = ingest_csv(parse_csv(bytes), io);
  for (const auto& n : res.notices) log << "note: " << n << "\n";
  return {std::move(res.data), sha256_hex(bytes), path.string()};
}

/// Collects outputs of one run and finishes with the manifest.
class OutputSet {
 public:
  OutputSet(fs::path dir, RunManifest manifest)
      : dir_(std::move(dir)), manifest_(std::move(manifest)), id_(manifest_.run_id()),
        start_(std::chrono::steady_clock::now()) {
    fs::create_directories(dir_);
  }

  const std::string& run_id() const { return id_; }

  void write(const std::string& name, const std::string& content) {
    atomic_write(dir_ / name, content);
    manifest_.outputs[name] = sha256_hex(content);
  }

  /// JSON documents lead with the run id of the producing run.
  void write_json(const std::string& name, const Json& body) {
    Json j;
    j["run_id"] = id_;
    for (const auto& [k, v] : body.items()) j[k] = v;
    write(name, dump(j));
  }

  void finish(std::ostream& log) {
    atomic_write(dir_ / "manifest.json", dump(manifest_.to_json()));
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    atomic_write(dir_ / "timing.json",
                 dump(Json{{"run_id", id_}, {"command", manifest_.command}, {"seconds", secs}}));
    log << manifest_.command << ": wrote " << manifest_.outputs.size() << " files to " << dir_.string()
        << " (run " << id_.substr(0, 12) << ")\n";
  }

 private:
  fs::path dir_;
  RunManifest manifest_;
  std::string id_;
  std::chrono::steady_clock::time_point start_;
};

RunManifest new_manifest(const std::string& command, const RunConfig& c, const LoadedData* data) {
  RunManifest m;
  m.command = command;
  m.config_sha256 = config_hash(c);
  if (data) {
    m.data_sha256 = data->sha256;
    m.data_path = data->path;
  }
  m.seed = c.sampler.seed;
  m.arguments = Json::object();
  return m;
}

int population_of(const RunConfig& c, const SurvivalDataset& data) {
  if (!c.population) return 0;
  try {
    return data.study_id(*c.population);
  } catch (const std::invalid_argument&) {
    throw std::invalid_argument("population '" + *c.population + "' is not a study in the data");
  }
}

Json warnings_json(const std::vector<KnotWarning>& ws, const SurvivalDataset& data) {
  Json out = Json::array();
  for (const auto& w : ws) {
    out.push_back({{"study", data.study_labels()[static_cast<std::size_t>(w.study)]},
                   {"knot", w.knot},
                   {"last_time", w.last_time},
                   {"distance", w.distance},
                   {"gap", w.gap},
                   {"message", w.message}});
  }
  return out;
}

/// A completed fit, reloaded from its directory.
struct StoredFit {
  fs::path dir;
  RunManifest manifest;
  std::string run_id;
  RunConfig config;
  LoadedData data;
  std::unique_ptr<NmaModel> model;
  PosteriorDraws draws;
};

StoredFit load_fit(const fs::path& dir, const CommandOptions& o, bool with_loglik) {
  StoredFit f;
  f.dir = dir;
  f.manifest = read_manifest(dir);
  if (f.manifest.command != "fit") {
    throw std::invalid_argument(dir.string() + " holds a '" + f.manifest.command + "' run, not a fit");
  }
  f.run_id = f.manifest.run_id();
  const auto cfg_path = dir / "config.json";
  if (!fs::exists(cfg_path)) throw std::invalid_argument("missing upstream artifact: " + cfg_path.string());
  f.config = parse_config(Json::parse(read_file(cfg_path)));
  if (config_hash(f.config) != f.manifest.config_sha256) {
    throw std::invalid_argument("config/spec mismatch: " + cfg_path.string() + " does not match its manifest");
  }
  if (o.config) {
    const RunConfig user = load_config(*o.config);
    const Json a = config_to_json(user), b = config_to_json(f.config);
    if (a["model"] != b["model"] ||
        (user.reference_treatment && user.reference_treatment != f.config.reference_treatment)) {
      throw std::invalid_argument("config/spec mismatch: the model in " + o.config->string() +
                                  " differs from the one fitted in " + dir.string());
    }
    f.config.grid_max = user.grid_max;
    f.config.grid_points = user.grid_points;
    f.config.population = user.population;
    f.config.treatments = user.treatments;
    f.config.covariate_values = user.covariate_values;
    f.config.mvn_validation_draws = user.mvn_validation_draws;
  }
  if (o.grid_max) f.config.grid_max = *o.grid_max;
  if (o.population) f.config.population = *o.population;
  if (!o.treatments.empty()) f.config.treatments = o.treatments;

  const fs::path data_path = o.data ? *o.data : fs::path(f.manifest.data_path);
  if (!fs::exists(data_path)) throw std::invalid_argument("missing upstream artifact: " + data_path.string());
  std::ostringstream quiet;
  f.data = load_data(data_path, f.config, quiet);
  if (f.data.sha256 != f.manifest.data_sha256) {
    throw std::invalid_argument("data file " + data_path.string() + " differs from the one fitted in " +
                                dir.string() + " (sha256 mismatch)");
  }
  f.model = std::make_unique<NmaModel>(build_spec(f.config, f.data.data), f.data.data);
  const auto draws_path = dir / "draws.csv";
  const auto loglik_path = dir / "loglik.csv";
  for (const auto& p : {draws_path, loglik_path}) {
    if (!fs::exists(p)) throw std::invalid_argument("missing upstream artifact: " + p.string());
  }
  for (const auto& name : {"draws.csv", "loglik.csv"}) {
    const auto it = f.manifest.outputs.find(name);
    if (it == f.manifest.outputs.end() || it->second != sha256_hex(read_file(dir / name))) {
      throw std::invalid_argument((dir / name).string() + " does not match its manifest");
    }
  }
  f.draws = read_draws(draws_path, f.model->layout().coordinate_names(),
                       with_loglik ? std::optional<fs::path>(loglik_path) : std::nullopt);
  return f;
}

std::vector<int> prediction_treatments(const RunConfig& c, const NmaModel& model, int study) {
  const auto& data = model.data();
  std::vector<int> out;
  if (c.treatments.empty()) {
    for (int k = 0; k < data.num_treatments(); ++k) {
      if (model.can_predict(study, k)) out.push_back(k);
    }
  } else {
    for (const auto& t : c.treatments) out.push_back(data.treatment_id(t));
  }
  return out;
}

std::optional<Eigen::VectorXd> prediction_covariates(const RunConfig& c, const NmaModel& model, int study) {
  if (c.covariate_values.empty()) return std::nullopt;
  Eigen::VectorXd raw = model.study_mean_covariates(study);
  const auto& cols = model.covariate_columns();
  for (const auto& [name, v] : c.covariate_values) {
    const auto it = std::find(cols.begin(), cols.end(), name);
    if (it == cols.end()) throw std::invalid_argument("prediction covariate '" + name + "' is not in the model");
    raw[it - cols.begin()] = v;
  }
  return raw;
}

std::vector<double> prediction_grid(const RunConfig& c, const NmaModel& model, int study) {
  return default_grid(model, study, c.grid_max.value_or(model.data().last_time(study)), c.grid_points);
}

Json labels_json(const std::vector<int>& ids, const SurvivalDataset& data) {
  Json out = Json::array();
  for (int k : ids) out.push_back(data.treatment_labels()[static_cast<std::size_t>(k)]);
  return out;
}

}  // namespace

void run_knots(const CommandOptions& o) {
  if (!o.data) throw std::invalid_argument("knots needs --data");
  auto& log = log_of(o);
  RunConfig c = base_config(o);
  if (o.reference) c.reference_treatment = *o.reference;
  const auto data = load_data(*o.data, c, log);
  const auto& d = data.data;
  log << d.summary();
  const KnotPlan plan = plan_knots(c, d);
  const auto warnings = audit_knots(plan, d);
  for (const auto& w : warnings) log << "warning: " << w.message << "\n";

  RunManifest m = new_manifest("knots", c, &data);
  m.knot_plan = knot_plan_json(plan, d);
  OutputSet out(o.out_dir, m);
  out.write_json("network.json", network_json(d));
  out.write_json("knots.json", Json{{"plan", m.knot_plan}, {"audit", warnings_json(warnings, d)}});
  CsvWriter km({"study", "treatment", "time", "survival", "n_risk", "n_event", "n_censor"});
  for (int s = 0; s < d.num_studies(); ++s) {
    for (int k : d.arms(s)) {
      for (const auto& p : kaplan_meier(d, s, k)) {
        km.cell(d.study_labels()[static_cast<std::size_t>(s)])
            .cell(d.treatment_labels()[static_cast<std::size_t>(k)])
            .cell(p.time)
            .cell(p.survival)
            .cell(p.n_risk)
            .cell(p.n_event)
            .cell(p.n_censor);
        km.end_row();
      }
    }
  }
  out.write("km.csv", km.str());
  out.finish(log);
}

void run_fit(const CommandOptions& o) {
  if (!o.data) throw std::invalid_argument("fit needs --data");
  auto& log = log_of(o);
  RunConfig c = base_config(o);
  if (o.reference) c.reference_treatment = *o.reference;
  const auto data = load_data(*o.data, c, log);
  const auto& d = data.data;
  log << d.summary();
  c.reference_treatment = d.treatment_labels().front();
  const ModelSpec spec = build_spec(c, d);
  const auto knot_warnings = audit_knots(spec.knots, d);
  for (const auto& w : knot_warnings) log << "warning: " << w.message << "\n";
  const NmaModel model(spec, d);
  log << "fit: " << to_string(c.family) << ", " << to_string(c.effects) << " effects, "
      << model.dim() << " parameters, " << c.sampler.chains << " chains x (" << c.sampler.warmup << " + "
      << c.sampler.sampling << ")\n";

  const PosteriorDraws draws = sample(model, c.sampler);
  const DiagnosticsReport rep = diagnostics(draws, c.sampler.max_depth);
  for (const auto& w : rep.warnings) log << "warning: " << w << "\n";

  RunManifest m = new_manifest("fit", c, &data);
  m.knot_plan = knot_plan_json(spec.knots, d);
  OutputSet out(o.out_dir, m);
  out.write("config.json", dump(config_to_json(c)));
  out.write_json("network.json", network_json(d));
  out.write_json("knots.json", Json{{"plan", m.knot_plan}, {"audit", warnings_json(knot_warnings, d)}});
  out.write("draws.csv", draws_to_csv(draws));
  out.write("loglik.csv", loglik_to_csv(draws));
  out.write("derived.csv", draws_to_csv(derived_draws(model, draws)));
  out.write("diagnostics.csv", diagnostics_to_csv(rep));
  Json adapt = Json::array();
  for (const auto& a : draws.adaptation) {
    adapt.push_back({{"step_size", a.step_size},
                     {"inv_metric_diag", std::vector<double>(a.inv_metric_diag.data(),
                                                             a.inv_metric_diag.data() + a.inv_metric_diag.size())}});
  }
  Json summary = diagnostics_summary_json(rep);
  summary["adaptation"] = adapt;
  out.write_json("diagnostics.json", summary);
  out.finish(log);
}

void run_predict(const CommandOptions& o) {
  if (o.fits.size() != 1) throw std::invalid_argument("predict needs exactly one --fit directory");
  auto& log = log_of(o);
  const StoredFit f = load_fit(o.fits.front(), o, false);
  const auto& model = *f.model;
  const auto& d = model.data();
  const int study = population_of(f.config, d);
  const auto treatments = prediction_treatments(f.config, model, study);
  const auto grid = prediction_grid(f.config, model, study);
  PredictionOptions popt;
  popt.covariates = prediction_covariates(f.config, model, study);

  int reference = model.can_predict(study, 0) ? 0 : d.arm_one(study);
  if (o.reference) reference = d.treatment_id(*o.reference);

  auto curves = predict_curves(model, f.draws, study, treatments, grid, popt);
  std::vector<int> others;
  for (int k : treatments) {
    if (k != reference) others.push_back(k);
  }
  std::vector<CurveEstimate> lhr;
  if (!others.empty()) lhr = log_hazard_ratio_curves(model, f.draws, study, others, reference, grid, popt);

  RunManifest m = new_manifest("predict", f.config, &f.data);
  m.knot_plan = f.manifest.knot_plan;
  m.upstream_run_id = f.run_id;
  m.arguments = {{"fit", f.dir.string()},
                 {"population", d.study_labels()[static_cast<std::size_t>(study)]},
                 {"treatments", labels_json(treatments, d)},
                 {"reference", d.treatment_labels()[static_cast<std::size_t>(reference)]}};
  OutputSet out(o.out_dir, m);
  out.write("curves.csv", curves_to_csv(curves));
  out.write("log_hazard_ratios.csv", curves_to_csv(lhr));
  Json info = m.arguments;
  info["upstream_run_id"] = f.run_id;
  info["grid_points"] = grid.size();
  info["horizon"] = grid.back();
  info["extrapolation"] = "constant hazard beyond the upper boundary knot";
  info["conditional"] = popt.covariates.has_value();
  if (popt.covariates) {
    Json cov = Json::object();
    for (std::size_t i = 0; i < model.covariate_columns().size(); ++i) {
      cov[model.covariate_columns()[i]] = (*popt.covariates)[static_cast<Eigen::Index>(i)];
    }
    info["covariates"] = cov;
    info["note"] = "contrasts are conditional on the listed covariate values";
  }
  out.write_json("predict.json", info);
  out.finish(log);
}

void run_loo(const CommandOptions& o) {
  if (o.fits.empty()) throw std::invalid_argument("loo needs at least one --fit directory");
  if (!o.labels.empty() && o.labels.size() != o.fits.size()) {
    throw std::invalid_argument("loo: give one --label per --fit");
  }
  auto& log = log_of(o);
  std::vector<std::string> labels;
  std::vector<LooReport> reports;
  std::vector<StoredFit> fits;
  for (std::size_t i = 0; i < o.fits.size(); ++i) {
    fits.push_back(load_fit(o.fits[i], o, true));
    labels.push_back(o.labels.empty() ? o.fits[i].filename().string() : o.labels[i]);
    if (fits[i].data.sha256 != fits.front().data.sha256) {
      throw std::invalid_argument("loo: fits " + o.fits.front().string() + " and " + o.fits[i].string() +
                                  " used different data; LOOIC is not comparable");
    }
    reports.push_back(loo(fits[i].draws, fits[i].model->data()));
    for (const auto& w : reports.back().warnings) log << "warning (" << labels.back() << "): " << w << "\n";
  }
  if (std::set<std::string>(labels.begin(), labels.end()).size() != labels.size()) {
    throw std::invalid_argument("loo: model labels must be distinct");
  }

  const StoredFit& first = fits.front();
  RunManifest m = new_manifest("loo", first.config, &first.data);
  Json upstream = Json::array();
  std::string ids;
  for (std::size_t i = 0; i < fits.size(); ++i) {
    upstream.push_back({{"label", labels[i]}, {"fit", fits[i].dir.string()}, {"run_id", fits[i].run_id}});
    ids += (i ? "," : "") + fits[i].run_id;
  }
  m.upstream_run_id = ids;
  m.arguments = {{"models", upstream}};
  m.config_sha256 = sha256_hex(ids);
  OutputSet out(o.out_dir, m);
  Json models = Json::object();
  for (std::size_t i = 0; i < fits.size(); ++i) {
    out.write("loo_pointwise_" + std::to_string(i + 1) + ".csv",
              loo_pointwise_to_csv(reports[i], fits[i].model->data()));
    Json r = loo_json(reports[i]);
    r["fit"] = fits[i].dir.string();
    r["upstream_run_id"] = fits[i].run_id;
    r["pointwise_file"] = "loo_pointwise_" + std::to_string(i + 1) + ".csv";
    models[labels[i]] = r;
  }
  out.write("loo_table.csv", loo_table_to_csv(loo_comparison(labels, reports)));
  out.write_json("loo.json", Json{{"models", models}});
  out.finish(log);
}

void run_prior_predictive(const CommandOptions& o) {
  auto& log = log_of(o);
  RunConfig c = base_config(o);
  if (o.reference) c.reference_treatment = *o.reference;
  std::optional<LoadedData> data;
  KnotVector knots;
  std::string source;
  if (c.prior_knots) {
    knots = *c.prior_knots;
    source = "config";
  } else if (o.data) {
    data = load_data(*o.data, c, log);
    const int study = population_of(c, data->data);
    knots = plan_knots(c, data->data).for_study(study);
    source = "knot plan for study " + data->data.study_labels()[static_cast<std::size_t>(study)];
  } else {
    throw std::invalid_argument("prior-predictive needs --data or prior_predictive.knots in the config");
  }
  const SplineBasis basis(knots, c.kappa);
  std::vector<double> grid(static_cast<std::size_t>(c.grid_points));
  for (std::size_t i = 0; i < grid.size(); ++i) {
    grid[i] = knots.lower + knots.width() * static_cast<double>(i) / static_cast<double>(grid.size() - 1);
  }

  RunManifest m = new_manifest("prior-predictive", c, data ? &*data : nullptr);
  m.knot_plan = {{"source", source}, {"lower", knots.lower}, {"internal", knots.internal}, {"upper", knots.upper}};
  OutputSet out(o.out_dir, m);
  Json files = Json::object();
  for (std::size_t v = 0; v < c.prior_variants.size(); ++v) {
    Rng rng = make_rng(c.sampler.seed, v);
    const auto rib = sample_prior_hazard(c.prior_variants[v], basis, grid, c.prior_draws, c.prior_sigma_scale, rng);
    std::vector<std::string> header{"time"};
    for (double l : rib.levels) header.push_back(quantile_column(l));
    CsvWriter w(header);
    for (std::size_t g = 0; g < rib.grid.size(); ++g) {
      w.cell(rib.grid[g]);
      for (Eigen::Index l = 0; l < rib.values.cols(); ++l) w.cell(rib.values(static_cast<Eigen::Index>(g), l));
      w.end_row();
    }
    const std::string name = std::string("prior_") + to_string(c.prior_variants[v]) + ".csv";
    out.write(name, w.str());
    files[to_string(c.prior_variants[v])] = name;
  }
  out.write_json("prior_predictive.json", Json{{"quantity", "baseline hazard"},
                                               {"draws", c.prior_draws},
                                               {"sigma_scale", c.prior_sigma_scale},
                                               {"kappa", c.kappa},
                                               {"knots", m.knot_plan},
                                               {"files", files}});
  out.finish(log);
}

void run_export_mvn(const CommandOptions& o) {
  if (o.fits.size() != 1) throw std::invalid_argument("export-mvn needs exactly one --fit directory");
  auto& log = log_of(o);
  const StoredFit f = load_fit(o.fits.front(), o, false);
  const auto& model = *f.model;
  const auto& d = model.data();
  const int study = population_of(f.config, d);
  const auto treatments = prediction_treatments(f.config, model, study);
  const auto grid = prediction_grid(f.config, model, study);
  Eigen::VectorXd x;
  if (const auto raw = prediction_covariates(f.config, model, study)) x = model.centre(*raw);
  const MvnExport bundle = export_mvn(model, f.draws, study, treatments, grid, x);
  const std::uint64_t seed = o.seed.value_or(f.config.sampler.seed);
  const MvnValidation val = validate_mvn(bundle, model, f.draws, study, treatments,
                                         f.config.mvn_validation_draws, seed, x);

  RunManifest m = new_manifest("export-mvn", f.config, &f.data);
  m.seed = seed;
  m.knot_plan = f.manifest.knot_plan;
  m.upstream_run_id = f.run_id;
  m.arguments = {{"fit", f.dir.string()},
                 {"population", d.study_labels()[static_cast<std::size_t>(study)]},
                 {"treatments", labels_json(treatments, d)}};
  OutputSet out(o.out_dir, m);

  auto write_matrix = [&](const std::string& name, const Eigen::MatrixXd& mat) {
    const std::string text = matrix_to_text(mat);
    const Eigen::MatrixXd back = matrix_from_text(text);
    if (back.rows() != mat.rows() || back.cols() != mat.cols() || !(back.array() == mat.array()).all()) {
      throw std::runtime_error("export-mvn: " + name + " does not round-trip exactly");
    }
    out.write(name, text);
  };
  write_matrix("grid.txt", Eigen::Map<const Eigen::VectorXd>(bundle.grid.data(), static_cast<Eigen::Index>(bundle.grid.size())));
  write_matrix("basis.txt", bundle.basis);
  Json blocks = Json::array();
  for (std::size_t b = 0; b < bundle.blocks.size(); ++b) {
    const auto& blk = bundle.blocks[b];
    const std::string mean_name = "mean_" + std::to_string(b + 1) + ".txt";
    const std::string cov_name = "covariance_" + std::to_string(b + 1) + ".txt";
    write_matrix(mean_name, blk.mean);
    write_matrix(cov_name, blk.covariance);
    blocks.push_back({{"population", blk.population},
                      {"treatment", blk.treatment},
                      {"parameters", blk.names},
                      {"mean_file", mean_name},
                      {"covariance_file", cov_name},
                      {"ridge", blk.ridge},
                      {"validation_max_median_gap", val.per_block[b]}});
  }
  out.write_json("metadata.json",
                 Json{{"upstream_run_id", f.run_id},
                      {"format", "whitespace-separated numbers, 17 significant digits, one row per line"},
                      {"cumulative_hazard", "H(t) = softmax([0, alpha_star])' basis(t) exp(eta)"},
                      {"grid_file", "grid.txt"},
                      {"basis_file", "basis.txt"},
                      {"blocks", blocks},
                      {"validation", {{"draws", f.config.mvn_validation_draws},
                                      {"seed", seed},
                                      {"max_median_survival_gap", val.max_median_gap}}},
                      {"notes", bundle.notes}});
  for (const auto& n : bundle.notes) log << "note: " << n << "\n";
  out.finish(log);
}

void run_simulate(const CommandOptions& o) {
  if (!o.config) throw std::invalid_argument("simulate needs --config describing the studies");
  auto& log = log_of(o);
  const std::string cfg_bytes = read_file(*o.config);
  Json j;
  try {
    j = Json::parse(cfg_bytes);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("simulate config: " + std::string(e.what()));
  }
  const std::uint64_t seed = o.seed.value_or(j.value("seed", std::uint64_t{1}));
  for (const auto& [k, v] : j.items()) {
    (void)v;
    if (k != "seed" && k != "censor_time" && k != "studies") {
      throw std::invalid_argument("simulate config: unknown key '" + k + "'");
    }
  }
  if (!j.contains("studies") || !j["studies"].is_array() || j["studies"].empty()) {
    throw std::invalid_argument("simulate config: 'studies' must be a non-empty array");
  }
  CsvWriter w({"study", "treatment", "time", "status"});
  std::uint64_t stream = 0;
  std::size_t total = 0;
  for (const auto& s : j["studies"]) {
    const auto label = s.at("study").get<std::string>();
    const double censor = s.contains("censor_time") ? s["censor_time"].get<double>() : j.at("censor_time").get<double>();
    for (const auto& a : s.at("arms")) {
      const auto trt = a.at("treatment").get<std::string>();
      const int n = a.at("n").get<int>();
      const auto& hz = a.at("hazard");
      HazardSpec h;
      if (hz.contains("rate")) {
        h = HazardSpec::constant(hz["rate"].get<double>(), censor);
      } else {
        const auto& k = hz.at("knots");
        h.knots = KnotVector(k.value("lower", 0.0), k.at("internal").get<std::vector<double>>(), k.at("upper").get<double>());
        h.kappa = hz.at("kappa").get<int>();
        const auto coef = hz.at("coefficients").get<std::vector<double>>();
        h.coefficients = Eigen::Map<const Eigen::VectorXd>(coef.data(), static_cast<Eigen::Index>(coef.size()));
        h.eta = hz.at("log_rate").get<double>();
      }
      Rng rng = make_rng(seed, stream++);
      for (const auto& r : simulate_survival(h, n, rng, censor)) {
        w.cell(label).cell(trt).cell(r.time).cell(r.event ? 1 : 0);
        w.end_row();
        ++total;
      }
    }
  }
  RunManifest m;
  m.command = "simulate";
  m.config_sha256 = sha256_hex(cfg_bytes);
  m.seed = seed;
  m.arguments = Json::object();
  OutputSet out(o.out_dir, m);
  out.write("data.csv", w.str());
  out.write_json("simulate.json", Json{{"records", total}, {"seed", seed}, {"specification", j}});
  out.finish(log);
}

}  // namespace survnma
