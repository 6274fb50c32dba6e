#include "survnma/cli_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <unistd.h>

#include <openssl/evp.h>

namespace survnma {

namespace fs = std::filesystem;

// --- CSV ---------------------------------------------------------------------

int CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;       // inside a quoted field
  bool was_quoted = false;   // current field started with a quote
  bool row_has_content = false;
  int line = 1, row_line = 1;
  std::size_t i = 0;
  if (text.compare(0, 3, "\xEF\xBB\xBF") == 0) i = 3;

  auto fail = [&](const std::string& msg) {
    throw std::invalid_argument("CSV line " + std::to_string(line) + ": " + msg);
  };
  auto finish_row = [&] {
    if (!row_has_content && row.empty() && field.empty()) return;  // blank line
    row.push_back(field);
    field.clear();
    if (t.header.empty()) {
      t.header = row;
    } else {
      if (row.size() != t.header.size()) {
        throw std::invalid_argument("CSV line " + std::to_string(row_line) + ": expected " +
                                    std::to_string(t.header.size()) + " fields, found " +
                                    std::to_string(row.size()));
      }
      t.rows.push_back(row);
      t.row_lines.push_back(row_line);
    }
    row.clear();
    row_has_content = false;
  };

  for (; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      if (!field.empty() || was_quoted) fail("quote inside an unquoted field");
      quoted = was_quoted = row_has_content = true;
    } else if (c == ',') {
      row.push_back(field);
      field.clear();
      was_quoted = false;
      row_has_content = true;
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      finish_row();
      was_quoted = false;
      ++line;
      row_line = line;
    } else {
      if (was_quoted) fail("characters after a closing quote");
      field.push_back(c);
      row_has_content = true;
    }
  }
  if (quoted) fail("unterminated quoted field");
  finish_row();
  if (t.header.empty()) throw std::invalid_argument("CSV input is empty");
  return t;
}

CsvTable read_csv(const fs::path& path) { return parse_csv(read_file(path)); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string format_double(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = b + s.size();
  while (b < e && *b == ' ') ++b;
  while (e > b && e[-1] == ' ') --e;
  if (b < e && *b == '+') ++b;
  const auto r = std::from_chars(b, e, v);
  if (r.ec != std::errc() || r.ptr != e || b == e) {
    throw std::invalid_argument("not a number: '" + s + "'");
  }
  return v;
}

CsvWriter::CsvWriter(const std::vector<std::string>& header) : columns_(header.size()) {
  for (const auto& h : header) cell(h);
  end_row();
}

CsvWriter& CsvWriter::cell(const std::string& s) {
  if (in_row_++ > 0) out_.push_back(',');
  out_ += csv_field(s);
  return *this;
}

CsvWriter& CsvWriter::cell(double x) { return cell(format_double(x)); }
CsvWriter& CsvWriter::cell(long long x) { return cell(std::to_string(x)); }

void CsvWriter::end_row() {
  if (in_row_ != columns_) {
    throw std::logic_error("CSV row has " + std::to_string(in_row_) + " cells, header has " +
                           std::to_string(columns_));
  }
  out_ += "\r\n";
  in_row_ = 0;
}

// --- files -----------------------------------------------------------------------

void atomic_write(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw std::runtime_error("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

// --- data --------------------------------------------------------------------------

IngestResult ingest_csv(const CsvTable& table, const IngestOptions& options) {
  const int c_study = table.column("study"), c_trt = table.column("treatment"),
            c_time = table.column("time"), c_status = table.column("status");
  for (const auto& [col, name] : {std::pair{c_study, "study"}, std::pair{c_trt, "treatment"},
                                  std::pair{c_time, "time"}, std::pair{c_status, "status"}}) {
    if (col < 0) throw std::invalid_argument(std::string("data file has no '") + name + "' column");
  }
  std::vector<int> cov_cols;
  std::vector<std::string> cov_names;
  if (options.covariates.empty()) {
    for (std::size_t c = 0; c < table.header.size(); ++c) {
      const int ci = static_cast<int>(c);
      if (ci != c_study && ci != c_trt && ci != c_time && ci != c_status) {
        cov_cols.push_back(ci);
        cov_names.push_back(table.header[c]);
      }
    }
  } else {
    for (const auto& name : options.covariates) {
      const int c = table.column(name);
      if (c < 0) throw std::invalid_argument("data file has no covariate column '" + name + "'");
      cov_cols.push_back(c);
      cov_names.push_back(name);
    }
  }

  std::set<std::string> studies, treatments;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string where = "line " + std::to_string(table.row_lines[r]) + ": ";
    if (row[static_cast<std::size_t>(c_study)].empty()) throw std::invalid_argument(where + "missing study");
    if (row[static_cast<std::size_t>(c_trt)].empty()) throw std::invalid_argument(where + "missing treatment");
    studies.insert(row[static_cast<std::size_t>(c_study)]);
    treatments.insert(row[static_cast<std::size_t>(c_trt)]);
  }
  if (table.rows.empty()) throw std::invalid_argument("data file has no records");

  IngestResult res;
  std::vector<std::string> study_labels(studies.begin(), studies.end());
  std::vector<std::string> trt_labels(treatments.begin(), treatments.end());
  if (options.reference) {
    const auto it = std::find(trt_labels.begin(), trt_labels.end(), *options.reference);
    if (it == trt_labels.end()) {
      throw std::invalid_argument("reference treatment '" + *options.reference + "' does not appear in the data");
    }
    std::rotate(trt_labels.begin(), it, it + 1);
  } else {
    res.notices.push_back("reference treatment defaults to '" + trt_labels.front() +
                          "' (alphabetically first); set reference_treatment to change it");
  }
  auto index_of = [](const std::vector<std::string>& v, const std::string& s) {
    return static_cast<int>(std::find(v.begin(), v.end(), s) - v.begin());
  };

  std::vector<SurvivalRecord> recs;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(cov_cols.size()));
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string where = "line " + std::to_string(table.row_lines[r]) + ": ";
    SurvivalRecord rec;
    rec.study = index_of(study_labels, row[static_cast<std::size_t>(c_study)]);
    rec.treatment = index_of(trt_labels, row[static_cast<std::size_t>(c_trt)]);
    const auto& ts = row[static_cast<std::size_t>(c_time)];
    if (ts.empty()) throw std::invalid_argument(where + "missing time");
    try {
      rec.time = parse_double(ts);
    } catch (const std::invalid_argument&) {
      throw std::invalid_argument(where + "time '" + ts + "' is not a number");
    }
    if (!std::isfinite(rec.time) || rec.time < 0.0) {
      throw std::invalid_argument(where + "time must be a finite, nonnegative number");
    }
    const auto& st = row[static_cast<std::size_t>(c_status)];
    if (st != "0" && st != "1") {
      throw std::invalid_argument(where + "status must be 0 (censored) or 1 (event), found '" + st + "'");
    }
    rec.event = st == "1";
    if (rec.event && rec.time == 0.0) throw std::invalid_argument(where + "event at time 0 is not allowed");
    for (std::size_t c = 0; c < cov_cols.size(); ++c) {
      const auto& v = row[static_cast<std::size_t>(cov_cols[c])];
      try {
        x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = parse_double(v);
      } catch (const std::invalid_argument&) {
        throw std::invalid_argument(where + "covariate '" + cov_names[c] + "' value '" + v + "' is not a number");
      }
      if (!std::isfinite(x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)))) {
        throw std::invalid_argument(where + "covariate '" + cov_names[c] + "' is not finite");
      }
    }
    recs.push_back(rec);
  }
  res.data = cov_names.empty() ? SurvivalDataset(study_labels, trt_labels, std::move(recs))
                               : SurvivalDataset(study_labels, trt_labels, std::move(recs), cov_names, x);
  res.data.validate();
  return res;
}

IngestResult ingest(const fs::path& path, const IngestOptions& options) {
  return ingest_csv(read_csv(path), options);
}

std::string dataset_to_csv(const SurvivalDataset& data) {
  std::vector<std::string> header{"study", "treatment", "time", "status"};
  for (const auto& c : data.covariate_names()) header.push_back(c);
  CsvWriter w(header);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& r = data.record(i);
    w.cell(data.study_labels()[static_cast<std::size_t>(r.study)])
        .cell(data.treatment_labels()[static_cast<std::size_t>(r.treatment)])
        .cell(r.time)
        .cell(r.event ? 1 : 0);
    for (std::size_t c = 0; c < data.covariate_names().size(); ++c) {
      w.cell(data.covariates()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)));
    }
    w.end_row();
  }
  return w.str();
}

Json network_json(const SurvivalDataset& data) {
  Json j;
  j["studies"] = data.study_labels();
  j["treatments"] = data.treatment_labels();
  j["reference_treatment"] = data.treatment_labels().front();
  j["n"] = data.size();
  Json arms = Json::array();
  for (int s = 0; s < data.num_studies(); ++s) {
    for (int k : data.arms(s)) {
      int n = 0, ev = 0;
      for (auto i : data.study_records(s)) {
        if (data.record(i).treatment == k) {
          ++n;
          ev += data.record(i).event ? 1 : 0;
        }
      }
      arms.push_back({{"study", data.study_labels()[static_cast<std::size_t>(s)]},
                      {"treatment", data.treatment_labels()[static_cast<std::size_t>(k)]},
                      {"n", n},
                      {"events", ev}});
    }
  }
  j["arms"] = arms;
  return j;
}

// --- configuration ------------------------------------------------------------------

namespace {

Json knots_json(const KnotVector& k) {
  return {{"lower", k.lower}, {"internal", k.internal}, {"upper", k.upper}};
}

void check_keys(const Json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw std::invalid_argument("config: '" + path + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    (void)v;
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; })) {
      throw std::invalid_argument("config: unknown key '" + path + (path.empty() ? "" : ".") + k + "'");
    }
  }
}

template <class T>
T get(const Json& j, const std::string& key, const std::string& path) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config: bad value for '" + path + "." + key + "': " + e.what());
  }
}

template <class T>
void read_opt(const Json& j, const char* key, const std::string& path, T& out) {
  if (j.contains(key)) out = get<T>(j, key, path);
}

std::vector<std::string> string_list(const Json& j, const char* key, const std::string& path) {
  return j.contains(key) ? get<std::vector<std::string>>(j, key, path) : std::vector<std::string>{};
}

}  // namespace

RunConfig parse_config(const Json& j) {
  RunConfig c;
  check_keys(j, "", {"model", "sampler", "reference_treatment", "prediction", "prior_predictive", "export"});
  if (j.contains("model")) {
    const auto& m = j["model"];
    check_keys(m, "model", {"family", "effects", "inconsistency", "node_split", "kappa", "knots",
                            "stratify_by_treatment", "nonprop_effects", "covariates", "priors"});
    try {
      if (m.contains("family")) c.family = family_from_string(get<std::string>(m, "family", "model"));
      if (m.contains("effects")) c.effects = effects_from_string(get<std::string>(m, "effects", "model"));
      if (m.contains("inconsistency")) {
        c.inconsistency = inconsistency_from_string(get<std::string>(m, "inconsistency", "model"));
      }
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(std::string("config: ") + e.what());
    }
    if (m.contains("node_split")) {
      const auto v = get<std::vector<std::string>>(m, "node_split", "model");
      if (v.size() != 2) throw std::invalid_argument("config: model.node_split must list two treatments");
      c.node_split = std::make_pair(v[0], v[1]);
    }
    read_opt(m, "kappa", "model", c.kappa);
    read_opt(m, "stratify_by_treatment", "model", c.stratify_by_treatment);
    read_opt(m, "nonprop_effects", "model", c.nonprop_effects);
    if (m.contains("knots")) {
      const auto& k = m["knots"];
      check_keys(k, "model.knots", {"internal", "common", "quantile_rule", "add"});
      read_opt(k, "internal", "model.knots", c.knots.internal);
      if (k.contains("common")) c.knots.common = get<bool>(k, "common", "model.knots");
      if (k.contains("quantile_rule")) {
        c.knots.rule = quantile_rule_from_string(get<std::string>(k, "quantile_rule", "model.knots"));
      }
      if (k.contains("add")) {
        if (!k["add"].is_array()) throw std::invalid_argument("config: model.knots.add must be an array");
        for (const auto& a : k["add"]) {
          check_keys(a, "model.knots.add[]", {"time", "study"});
          KnotSettings::Added added;
          added.time = get<double>(a, "time", "model.knots.add[]");
          if (a.contains("study")) added.study = get<std::string>(a, "study", "model.knots.add[]");
          c.knots.added.push_back(added);
        }
      }
    }
    if (m.contains("covariates")) {
      const auto& cv = m["covariates"];
      const std::string p = "model.covariates";
      check_keys(cv, p, {"prognostic", "effect_modifiers", "spline", "spline_interactions", "strata"});
      c.covariates.prognostic = string_list(cv, "prognostic", p);
      c.covariates.effect_modifiers = string_list(cv, "effect_modifiers", p);
      c.covariates.spline = string_list(cv, "spline", p);
      c.covariates.spline_interactions = string_list(cv, "spline_interactions", p);
      c.covariates.strata = string_list(cv, "strata", p);
    }
    if (m.contains("priors")) {
      const auto& pr = m["priors"];
      const std::string p = "model.priors";
      check_keys(pr, p, {"mu_sd", "d_sd", "theta_sd", "beta_sd", "tau_sd", "sigma_sd", "sigma_alpha_sd",
                         "sigma_b_sd"});
      read_opt(pr, "mu_sd", p, c.priors.mu_sd);
      read_opt(pr, "d_sd", p, c.priors.d_sd);
      read_opt(pr, "theta_sd", p, c.priors.theta_sd);
      read_opt(pr, "beta_sd", p, c.priors.beta_sd);
      read_opt(pr, "tau_sd", p, c.priors.tau_sd);
      read_opt(pr, "sigma_sd", p, c.priors.sigma_sd);
      read_opt(pr, "sigma_alpha_sd", p, c.priors.sigma_alpha_sd);
      read_opt(pr, "sigma_b_sd", p, c.priors.sigma_b_sd);
      for (double v : {c.priors.mu_sd, c.priors.d_sd, c.priors.theta_sd, c.priors.beta_sd, c.priors.tau_sd,
                       c.priors.sigma_sd, c.priors.sigma_alpha_sd, c.priors.sigma_b_sd}) {
        if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("config: prior scales must be > 0");
      }
    }
  }
  if (j.contains("sampler")) {
    const auto& s = j["sampler"];
    const std::string p = "sampler";
    check_keys(s, p, {"chains", "warmup", "sampling", "target_accept", "max_depth", "seed", "init_radius",
                      "dense_metric", "threads"});
    read_opt(s, "chains", p, c.sampler.chains);
    read_opt(s, "warmup", p, c.sampler.warmup);
    read_opt(s, "sampling", p, c.sampler.sampling);
    read_opt(s, "target_accept", p, c.sampler.target_accept);
    read_opt(s, "max_depth", p, c.sampler.max_depth);
    read_opt(s, "seed", p, c.sampler.seed);
    read_opt(s, "init_radius", p, c.sampler.init_radius);
    read_opt(s, "dense_metric", p, c.sampler.dense_metric);
    read_opt(s, "threads", p, c.sampler.threads);
  }
  if (j.contains("reference_treatment")) c.reference_treatment = get<std::string>(j, "reference_treatment", "");
  if (j.contains("prediction")) {
    const auto& p = j["prediction"];
    check_keys(p, "prediction", {"grid_max", "grid_points", "population", "treatments", "covariates"});
    if (p.contains("grid_max")) c.grid_max = get<double>(p, "grid_max", "prediction");
    read_opt(p, "grid_points", "prediction", c.grid_points);
    if (p.contains("population")) c.population = get<std::string>(p, "population", "prediction");
    c.treatments = string_list(p, "treatments", "prediction");
    if (p.contains("covariates")) c.covariate_values = get<std::map<std::string, double>>(p, "covariates", "prediction");
  }
  if (j.contains("prior_predictive")) {
    const auto& p = j["prior_predictive"];
    check_keys(p, "prior_predictive", {"variants", "draws", "sigma_scale", "knots"});
    if (p.contains("knots")) {
      const auto& k = p["knots"];
      check_keys(k, "prior_predictive.knots", {"lower", "internal", "upper"});
      KnotVector kv;
      read_opt(k, "lower", "prior_predictive.knots", kv.lower);
      kv.internal = get<std::vector<double>>(k, "internal", "prior_predictive.knots");
      kv.upper = get<double>(k, "upper", "prior_predictive.knots");
      try {
        kv.validate();
      } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(std::string("config: prior_predictive.knots: ") + e.what());
      }
      c.prior_knots = kv;
    }
    if (p.contains("variants")) {
      c.prior_variants.clear();
      for (const auto& v : get<std::vector<std::string>>(p, "variants", "prior_predictive")) {
        c.prior_variants.push_back(prior_variant_from_string(v));
      }
    }
    read_opt(p, "draws", "prior_predictive", c.prior_draws);
    read_opt(p, "sigma_scale", "prior_predictive", c.prior_sigma_scale);
  }
  if (j.contains("export")) {
    check_keys(j["export"], "export", {"validation_draws"});
    read_opt(j["export"], "validation_draws", "export", c.mvn_validation_draws);
  }
  if (c.kappa < 1) throw std::invalid_argument("config: model.kappa must be >= 1");
  if (c.knots.internal < 0) throw std::invalid_argument("config: model.knots.internal must be >= 0");
  if (c.grid_points < 2) throw std::invalid_argument("config: prediction.grid_points must be >= 2");
  if (c.grid_max && !(*c.grid_max > 0.0)) throw std::invalid_argument("config: prediction.grid_max must be > 0");
  if (c.prior_draws < 2) throw std::invalid_argument("config: prior_predictive.draws must be >= 2");
  if (c.mvn_validation_draws < 2) throw std::invalid_argument("config: export.validation_draws must be >= 2");
  c.sampler.validate();
  return c;
}

RunConfig load_config(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

Json config_to_json(const RunConfig& c) {
  Json m;
  m["family"] = to_string(c.family);
  m["effects"] = to_string(c.effects);
  m["inconsistency"] = to_string(c.inconsistency);
  if (c.node_split) m["node_split"] = {c.node_split->first, c.node_split->second};
  m["kappa"] = c.kappa;
  Json k;
  k["internal"] = c.knots.internal;
  if (c.knots.common) k["common"] = *c.knots.common;
  k["quantile_rule"] = to_string(c.knots.rule);
  Json added = Json::array();
  for (const auto& a : c.knots.added) {
    Json e{{"time", a.time}};
    if (a.study) e["study"] = *a.study;
    added.push_back(e);
  }
  k["add"] = added;
  m["knots"] = k;
  m["stratify_by_treatment"] = c.stratify_by_treatment;
  m["nonprop_effects"] = c.nonprop_effects;
  m["covariates"] = {{"prognostic", c.covariates.prognostic},
                     {"effect_modifiers", c.covariates.effect_modifiers},
                     {"spline", c.covariates.spline},
                     {"spline_interactions", c.covariates.spline_interactions},
                     {"strata", c.covariates.strata}};
  const auto& p = c.priors;
  m["priors"] = {{"mu_sd", p.mu_sd},       {"d_sd", p.d_sd},         {"theta_sd", p.theta_sd},
                 {"beta_sd", p.beta_sd},   {"tau_sd", p.tau_sd},     {"sigma_sd", p.sigma_sd},
                 {"sigma_alpha_sd", p.sigma_alpha_sd}, {"sigma_b_sd", p.sigma_b_sd}};
  Json j;
  j["model"] = m;
  const auto& s = c.sampler;
  j["sampler"] = {{"chains", s.chains},           {"warmup", s.warmup},
                  {"sampling", s.sampling},       {"target_accept", s.target_accept},
                  {"max_depth", s.max_depth},     {"seed", s.seed},
                  {"init_radius", s.init_radius}, {"dense_metric", s.dense_metric}};
  if (c.reference_treatment) j["reference_treatment"] = *c.reference_treatment;
  Json pred;
  if (c.grid_max) pred["grid_max"] = *c.grid_max;
  pred["grid_points"] = c.grid_points;
  if (c.population) pred["population"] = *c.population;
  pred["treatments"] = c.treatments;
  pred["covariates"] = c.covariate_values;
  j["prediction"] = pred;
  Json variants = Json::array();
  for (auto v : c.prior_variants) variants.push_back(to_string(v));
  j["prior_predictive"] = {{"variants", variants}, {"draws", c.prior_draws}, {"sigma_scale", c.prior_sigma_scale}};
  if (c.prior_knots) j["prior_predictive"]["knots"] = knots_json(*c.prior_knots);
  j["export"] = {{"validation_draws", c.mvn_validation_draws}};
  return j;
}

KnotPlan plan_knots(const RunConfig& c, const SurvivalDataset& data) {
  const bool common = c.knots.common.value_or(c.family == Family::CoefficientNph);
  if (c.family == Family::CoefficientNph && !common) {
    throw std::invalid_argument("config: the nph_coef family needs common knots");
  }
  KnotPlan plan = common ? plan_common(data, c.knots.internal, c.knots.rule)
                         : plan_per_study(data, c.knots.internal, c.knots.rule);
  for (const auto& a : c.knots.added) {
    std::optional<int> study;
    if (a.study) study = data.study_id(*a.study);
    if (common && study) throw std::invalid_argument("config: knots added to a common plan take no study");
    if (!common && !study) throw std::invalid_argument("config: knots added to per-study plans need a study");
    plan = add_knot(plan, a.time, study);
  }
  return plan;
}

ModelSpec build_spec(const RunConfig& c, const SurvivalDataset& data) {
  ModelSpec s;
  s.family = c.family;
  s.effects = c.effects;
  s.inconsistency = c.inconsistency;
  if (c.inconsistency == Inconsistency::NodeSplit) {
    if (!c.node_split) throw std::invalid_argument("config: nodesplit needs model.node_split = [a, b]");
    s.split_a = data.treatment_id(c.node_split->first);
    s.split_b = data.treatment_id(c.node_split->second);
  }
  s.kappa = c.kappa;
  s.knots = plan_knots(c, data);
  s.stratify_by_treatment = c.stratify_by_treatment;
  s.nonprop_effects = c.nonprop_effects;
  s.covariates = c.covariates;
  s.priors = c.priors;
  s.validate(data);
  return s;
}

Json knot_plan_json(const KnotPlan& plan, const SurvivalDataset& data) {
  Json j;
  j["kind"] = plan.kind == KnotPlan::Kind::Common ? "common" : "per_study";
  Json overrides = Json::array();
  for (const auto& o : plan.provenance.overrides) {
    Json e{{"time", o.time}};
    if (o.study) e["study"] = data.study_labels()[static_cast<std::size_t>(*o.study)];
    overrides.push_back(e);
  }
  j["provenance"] = {{"scheme", plan.provenance.scheme},
                     {"quantile_rule", to_string(plan.provenance.rule)},
                     {"requested_internal", plan.provenance.requested_internal},
                     {"overrides", overrides}};
  if (plan.kind == KnotPlan::Kind::Common) {
    j["common"] = knots_json(plan.common);
  } else {
    Json per = Json::object();
    for (int s = 0; s < plan.num_studies(); ++s) {
      per[data.study_labels()[static_cast<std::size_t>(s)]] = knots_json(plan.per_study[static_cast<std::size_t>(s)]);
    }
    j["per_study"] = per;
  }
  return j;
}

// --- persisted fits ------------------------------------------------------------------

std::string draws_to_csv(const PosteriorDraws& d) {
  std::vector<std::string> header{"chain", "iteration"};
  header.insert(header.end(), d.names.begin(), d.names.end());
  for (const char* s : {"lp__", "accept_stat__", "treedepth__", "n_leapfrog__", "divergent__"}) header.push_back(s);
  CsvWriter w(header);
  const bool stats = d.lp.size() == d.draws.rows();
  for (int c = 0; c < d.chains; ++c) {
    for (int i = 0; i < d.iterations; ++i) {
      const auto r = d.row(c, i);
      w.cell(c + 1).cell(i + 1);
      for (Eigen::Index p = 0; p < d.draws.cols(); ++p) w.cell(d.draws(r, p));
      if (stats) {
        w.cell(d.lp[r]).cell(d.accept_stat[r]).cell(d.treedepth[r]).cell(d.n_leapfrog[r]).cell(d.divergent[r]);
      } else {
        for (int k = 0; k < 5; ++k) w.cell(std::string());
      }
      w.end_row();
    }
  }
  return w.str();
}

std::string loglik_to_csv(const PosteriorDraws& d) {
  std::vector<std::string> header{"chain", "iteration"};
  for (Eigen::Index i = 0; i < d.loglik.cols(); ++i) header.push_back("log_lik[" + std::to_string(i + 1) + "]");
  CsvWriter w(header);
  for (int c = 0; c < d.chains; ++c) {
    for (int i = 0; i < d.iterations; ++i) {
      const auto r = d.row(c, i);
      w.cell(c + 1).cell(i + 1);
      for (Eigen::Index p = 0; p < d.loglik.cols(); ++p) w.cell(d.loglik(r, p));
      w.end_row();
    }
  }
  return w.str();
}

namespace {

// Chain/iteration layout of a persisted table; rows must be chain-major.
std::pair<int, int> chain_layout(const CsvTable& t, const std::string& what) {
  if (t.header.size() < 2 || t.header[0] != "chain" || t.header[1] != "iteration") {
    throw std::invalid_argument(what + ": expected leading chain, iteration columns");
  }
  if (t.rows.empty()) throw std::invalid_argument(what + ": no draws");
  int chains = 0, iters = 0;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const int c = std::stoi(t.rows[r][0]), i = std::stoi(t.rows[r][1]);
    if (c == 1) iters = std::max(iters, i);
    chains = std::max(chains, c);
  }
  if (static_cast<std::size_t>(chains) * static_cast<std::size_t>(iters) != t.rows.size()) {
    throw std::invalid_argument(what + ": ragged chains");
  }
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto c = static_cast<int>(r) / iters + 1, i = static_cast<int>(r) % iters + 1;
    if (std::stoi(t.rows[r][0]) != c || std::stoi(t.rows[r][1]) != i) {
      throw std::invalid_argument(what + ": rows out of order at line " + std::to_string(t.row_lines[r]));
    }
  }
  return {chains, iters};
}

}  // namespace

PosteriorDraws read_draws(const fs::path& draws_csv, const std::vector<std::string>& expected_names,
                          const std::optional<fs::path>& loglik_csv) {
  const auto t = read_csv(draws_csv);
  const auto [chains, iters] = chain_layout(t, draws_csv.string());
  const std::size_t dim = expected_names.size();
  if (t.header.size() != dim + 7 ||
      !std::equal(expected_names.begin(), expected_names.end(), t.header.begin() + 2)) {
    throw std::invalid_argument(draws_csv.string() + ": parameter columns do not match the model");
  }
  PosteriorDraws d;
  d.names = expected_names;
  d.chains = chains;
  d.iterations = iters;
  const auto rows = static_cast<Eigen::Index>(t.rows.size());
  d.draws.resize(rows, static_cast<Eigen::Index>(dim));
  d.lp.resize(rows);
  d.accept_stat.resize(rows);
  d.treedepth.resize(rows);
  d.n_leapfrog.resize(rows);
  d.divergent.resize(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = t.rows[static_cast<std::size_t>(r)];
    for (std::size_t p = 0; p < dim; ++p) d.draws(r, static_cast<Eigen::Index>(p)) = parse_double(row[p + 2]);
    d.lp[r] = parse_double(row[dim + 2]);
    d.accept_stat[r] = parse_double(row[dim + 3]);
    d.treedepth[r] = std::stoi(row[dim + 4]);
    d.n_leapfrog[r] = std::stoi(row[dim + 5]);
    d.divergent[r] = std::stoi(row[dim + 6]);
  }
  if (loglik_csv) {
    const auto l = read_csv(*loglik_csv);
    const auto [lc, li] = chain_layout(l, loglik_csv->string());
    if (lc != chains || li != iters) throw std::invalid_argument("log-likelihood draws do not match the parameter draws");
    d.loglik.resize(rows, static_cast<Eigen::Index>(l.header.size() - 2));
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto& row = l.rows[static_cast<std::size_t>(r)];
      for (Eigen::Index p = 0; p < d.loglik.cols(); ++p) d.loglik(r, p) = parse_double(row[static_cast<std::size_t>(p) + 2]);
    }
  }
  return d;
}

std::string diagnostics_to_csv(const DiagnosticsReport& rep) {
  CsvWriter w({"parameter", "mean", "sd", "q5", "q50", "q95", "rhat", "ess_bulk", "ess_tail", "flagged"});
  for (const auto& p : rep.parameters) {
    w.cell(p.name).cell(p.mean).cell(p.sd).cell(p.q05).cell(p.q50).cell(p.q95);
    w.cell(p.rhat ? format_double(*p.rhat) : std::string("undefined"));
    w.cell(p.ess_bulk).cell(p.ess_tail).cell(p.flagged ? 1 : 0);
    w.end_row();
  }
  return w.str();
}

Json diagnostics_summary_json(const DiagnosticsReport& rep) {
  double max_rhat = 0.0, min_ess_bulk = std::numeric_limits<double>::infinity(),
         min_ess_tail = std::numeric_limits<double>::infinity();
  int undefined = 0;
  for (const auto& p : rep.parameters) {
    if (p.rhat) max_rhat = std::max(max_rhat, *p.rhat);
    else ++undefined;
    if (std::isfinite(p.ess_bulk)) min_ess_bulk = std::min(min_ess_bulk, p.ess_bulk);
    if (std::isfinite(p.ess_tail)) min_ess_tail = std::min(min_ess_tail, p.ess_tail);
  }
  Json j;
  j["draws"] = rep.total_draws;
  j["divergences"] = rep.divergences;
  j["max_treedepth_hits"] = rep.max_treedepth_hits;
  j["max_rhat"] = max_rhat;
  j["rhat_undefined"] = undefined;
  j["min_ess_bulk"] = std::isfinite(min_ess_bulk) ? Json(min_ess_bulk) : Json(nullptr);
  j["min_ess_tail"] = std::isfinite(min_ess_tail) ? Json(min_ess_tail) : Json(nullptr);
  j["flagged"] = rep.num_flagged();
  j["warnings"] = rep.warnings;
  return j;
}

PosteriorDraws derived_draws(const NmaModel& model, const PosteriorDraws& d) {
  PosteriorDraws out;
  out.names = model.derived_names();
  out.chains = d.chains;
  out.iterations = d.iterations;
  out.treedepth = d.treedepth;
  out.divergent = d.divergent;
  out.draws.resize(d.draws.rows(), static_cast<Eigen::Index>(out.names.size()));
  for (Eigen::Index r = 0; r < d.draws.rows(); ++r) {
    out.draws.row(r) = model.derived(d.draws.row(r).transpose()).transpose();
  }
  return out;
}

// --- products -------------------------------------------------------------------------

std::string quantile_column(double level) {
  return "q" + format_double(std::round(level * 1e6) / 1e4);
}

std::string curves_to_csv(const std::vector<CurveEstimate>& curves) {
  std::vector<std::string> header{"population", "treatment", "reference", "quantity", "conditional", "time", "mean"};
  const auto& levels = curves.empty() ? kRibbonLevels : curves.front().levels;
  for (double l : levels) header.push_back(quantile_column(l));
  CsvWriter w(header);
  for (const auto& c : curves) {
    if (c.levels != levels) throw std::invalid_argument("curves use different quantile levels");
    for (std::size_t g = 0; g < c.time.size(); ++g) {
      const auto gi = static_cast<Eigen::Index>(g);
      w.cell(c.population).cell(c.treatment).cell(c.reference).cell(std::string(to_string(c.quantity)));
      w.cell(c.conditional ? 1 : 0).cell(c.time[g]).cell(c.mean[gi]);
      for (Eigen::Index l = 0; l < c.quantiles.cols(); ++l) w.cell(c.quantiles(gi, l));
      w.end_row();
    }
  }
  return w.str();
}

std::string loo_pointwise_to_csv(const LooReport& rep, const SurvivalDataset& data) {
  CsvWriter w({"record", "study", "treatment", "time", "status", "elpd_loo", "p_loo", "pareto_k"});
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& r = data.record(i);
    const auto ii = static_cast<Eigen::Index>(i);
    w.cell(static_cast<long long>(i + 1))
        .cell(data.study_labels()[static_cast<std::size_t>(r.study)])
        .cell(data.treatment_labels()[static_cast<std::size_t>(r.treatment)])
        .cell(r.time)
        .cell(r.event ? 1 : 0)
        .cell(rep.elpd_i[ii])
        .cell(rep.p_loo_i[ii])
        .cell(rep.pareto_k[ii]);
    w.end_row();
  }
  return w.str();
}

std::string loo_table_to_csv(const LooTable& t) {
  std::vector<std::string> header{"row"};
  header.insert(header.end(), t.models.begin(), t.models.end());
  CsvWriter w(header);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    w.cell(t.rows[r]);
    for (Eigen::Index m = 0; m < t.values.cols(); ++m) w.cell(t.values(static_cast<Eigen::Index>(r), m));
    w.end_row();
  }
  return w.str();
}

Json loo_json(const LooReport& rep) {
  Json j;
  j["looic"] = rep.looic;
  j["elpd_loo"] = rep.elpd;
  j["p_loo"] = rep.p_loo;
  j["se_looic"] = rep.se_looic;
  j["pareto_k_above_0.7"] = rep.high_k;
  Json studies = Json::array();
  for (const auto& s : rep.per_study) {
    studies.push_back({{"study", s.study}, {"records", s.records}, {"looic", s.looic}, {"elpd_loo", s.elpd},
                       {"p_loo", s.p_loo}});
  }
  j["per_study"] = studies;
  j["warnings"] = rep.warnings;
  return j;
}

std::string matrix_to_text(const Eigen::MatrixXd& m) {
  std::string out;
  char buf[64];
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", m(r, c));
      if (c) out.push_back(' ');
      out += buf;
    }
    out.push_back('\n');
  }
  return out;
}

Eigen::MatrixXd matrix_from_text(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tok;
    std::vector<double> row;
    while (ls >> tok) row.push_back(parse_double(tok));
    if (!rows.empty() && row.size() != rows.front().size()) throw std::invalid_argument("ragged numeric matrix");
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return m;
}

// --- manifests --------------------------------------------------------------------------

std::string RunManifest::run_id() const {
  Json j;
  j["command"] = command;
  j["software_version"] = kSoftwareVersion;
  j["config_sha256"] = config_sha256;
  j["data_sha256"] = data_sha256;
  j["seed"] = seed;
  j["knot_plan"] = knot_plan;
  j["arguments"] = arguments;
  j["upstream_run_id"] = upstream_run_id;
  return sha256_hex(j.dump());
}

Json RunManifest::to_json() const {
  Json j;
  j["run_id"] = run_id();
  j["command"] = command;
  j["software_version"] = kSoftwareVersion;
  j["config_sha256"] = config_sha256;
  j["data_sha256"] = data_sha256;
  j["data_path"] = data_path;
  j["seed"] = seed;
  j["knot_plan"] = knot_plan;
  j["arguments"] = arguments;
  j["upstream_run_id"] = upstream_run_id;
  j["outputs"] = outputs;
  j["timing"] = "timing.json (not hashed; varies between runs)";
  return j;
}

RunManifest RunManifest::from_json(const Json& j) {
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.config_sha256 = j.at("config_sha256").get<std::string>();
  m.data_sha256 = j.at("data_sha256").get<std::string>();
  m.data_path = j.at("data_path").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.knot_plan = j.at("knot_plan");
  m.arguments = j.at("arguments");
  m.upstream_run_id = j.at("upstream_run_id").get<std::string>();
  m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
  if (j.at("run_id").get<std::string>() != m.run_id()) {
    throw std::invalid_argument("manifest run_id does not match its contents");
  }
  return m;
}

RunManifest read_manifest(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  if (!fs::exists(path)) throw std::invalid_argument("missing upstream artifact: " + path.string());
  try {
    return RunManifest::from_json(Json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("bad manifest " + path.string() + ": " + e.what());
  }
}

}  // namespace survnma
