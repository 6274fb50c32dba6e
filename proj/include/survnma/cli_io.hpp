#pragma once

// Files in and out: CSV ingest, JSON run configuration, persisted draws, run
// manifests, and atomic writes.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "survnma/coefficient_priors.hpp"
#include "survnma/dataset.hpp"
#include "survnma/inference_products.hpp"
#include "survnma/knot_planner.hpp"
#include "survnma/nma_model.hpp"
#include "survnma/posterior_engine.hpp"

namespace survnma {

using Json = nlohmann::ordered_json;

inline constexpr const char* kSoftwareVersion = "0.1.0";

// --- CSV ---------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> row_lines;  // 1-based source line of each row
  int column(const std::string& name) const;  // -1 when absent
};

/// RFC 4180 parser: quoted fields may hold commas, CRLF and doubled quotes.
/// Errors name the line.
CsvTable parse_csv(const std::string& text);
CsvTable read_csv(const std::filesystem::path& path);

/// Quotes a field when it holds a comma, quote, CR or LF.
std::string csv_field(const std::string& s);
/// Shortest decimal that parses back to the same double.
std::string format_double(double x);
double parse_double(const std::string& s);

class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header);
  CsvWriter& cell(const std::string& s);
  CsvWriter& cell(double x);
  CsvWriter& cell(long long x);
  CsvWriter& cell(int x) { return cell(static_cast<long long>(x)); }
  void end_row();
  const std::string& str() const { return out_; }

 private:
  std::string out_;
  std::size_t columns_ = 0;
  std::size_t in_row_ = 0;
};

// --- files ---------------------------------------------------------------------

/// Writes to a temporary file in the same directory, then renames over path.
void atomic_write(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);
std::string sha256_hex(const std::string& bytes);

// --- data ----------------------------------------------------------------------

struct IngestOptions {
  std::optional<std::string> reference;  // defaults to the alphabetically first label
  std::vector<std::string> covariates;   // extra columns to keep; empty keeps all others
};

struct IngestResult {
  SurvivalDataset data;
  std::vector<std::string> notices;
};

/// Columns study, treatment, time, status (0/1), plus optional covariates.
/// Labels map to ids alphabetically, with the reference treatment first.
IngestResult ingest_csv(const CsvTable& table, const IngestOptions& options = {});
IngestResult ingest(const std::filesystem::path& path, const IngestOptions& options = {});

/// Re-serialises a dataset in the ingest format, times at full precision.
std::string dataset_to_csv(const SurvivalDataset& data);

Json network_json(const SurvivalDataset& data);

// --- configuration ---------------------------------------------------------------

struct KnotSettings {
  int internal = kDefaultInternalKnots;
  std::optional<bool> common;  // default: common for nph_coef, per study otherwise
  QuantileRule rule = QuantileRule::Weibull;
  struct Added {
    double time = 0.0;
    std::optional<std::string> study;
  };
  std::vector<Added> added;
};

struct RunConfig {
  Family family = Family::ProportionalHazards;
  Effects effects = Effects::Fixed;
  Inconsistency inconsistency = Inconsistency::Consistency;
  std::optional<std::pair<std::string, std::string>> node_split;
  int kappa = 4;
  KnotSettings knots;
  bool stratify_by_treatment = true;
  bool nonprop_effects = true;
  CovariateDesign covariates;
  PriorSettings priors;
  SamplerConfig sampler;
  std::optional<std::string> reference_treatment;

  // Prediction defaults.
  std::optional<double> grid_max;
  int grid_points = 200;
  std::optional<std::string> population;
  std::vector<std::string> treatments;
  std::map<std::string, double> covariate_values;

  // Prior predictive.
  std::vector<PriorVariant> prior_variants{PriorVariant::Dirichlet, PriorVariant::RandomEffect,
                                           PriorVariant::RandomWalk, PriorVariant::WeightedRandomWalk};
  std::optional<KnotVector> prior_knots;  // used when no data file is given
  int prior_draws = 4000;
  double prior_sigma_scale = 1.0;

  // MVN export validation.
  int mvn_validation_draws = 4000;
};

/// Strict parse: unknown keys and bad values raise std::invalid_argument with
/// the JSON path.
RunConfig parse_config(const Json& j);
RunConfig load_config(const std::filesystem::path& path);
Json config_to_json(const RunConfig& c);

/// Knot plan for the configured family, with manual knots applied.
KnotPlan plan_knots(const RunConfig& c, const SurvivalDataset& data);
ModelSpec build_spec(const RunConfig& c, const SurvivalDataset& data);

Json knot_plan_json(const KnotPlan& plan, const SurvivalDataset& data);

// --- persisted fits ----------------------------------------------------------------

/// draws.csv: chain, iteration, one column per parameter, then sampler columns.
std::string draws_to_csv(const PosteriorDraws& d);
/// loglik.csv: chain, iteration, one column per record.
std::string loglik_to_csv(const PosteriorDraws& d);
/// Reads draws.csv (and loglik.csv if given) back; parameter names must match.
PosteriorDraws read_draws(const std::filesystem::path& draws_csv,
                          const std::vector<std::string>& expected_names,
                          const std::optional<std::filesystem::path>& loglik_csv = std::nullopt);

std::string diagnostics_to_csv(const DiagnosticsReport& rep);
Json diagnostics_summary_json(const DiagnosticsReport& rep);

/// Draws of the derived quantities (d, tau, sigma, ...) with chain structure.
PosteriorDraws derived_draws(const NmaModel& model, const PosteriorDraws& d);

// --- products ----------------------------------------------------------------------

/// Column name of a quantile level, e.g. 0.025 -> "q2.5".
std::string quantile_column(double level);

/// Long format: one row per (curve, time).
std::string curves_to_csv(const std::vector<CurveEstimate>& curves);
std::string loo_pointwise_to_csv(const LooReport& rep, const SurvivalDataset& data);
std::string loo_table_to_csv(const LooTable& t);
Json loo_json(const LooReport& rep);

/// Plain numeric text, 17 significant digits, one row per line.
std::string matrix_to_text(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_text(const std::string& text);

// --- manifests -----------------------------------------------------------------------

struct RunManifest {
  std::string command;
  std::string config_sha256;
  std::string data_sha256;
  std::string data_path;
  std::uint64_t seed = 0;
  Json knot_plan;
  Json arguments;
  std::string upstream_run_id;
  std::map<std::string, std::string> outputs;  // file name -> sha256

  /// Hash of everything that determines the outputs; JSON outputs carry it.
  std::string run_id() const;
  Json to_json() const;
  static RunManifest from_json(const Json& j);
};

RunManifest read_manifest(const std::filesystem::path& dir);

}  // namespace survnma
