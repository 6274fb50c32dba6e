#pragma once

// Subcommands of the survnma tool. Each reads its inputs, writes its outputs
// atomically into out_dir together with manifest.json, and throws on error.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace survnma {

struct CommandOptions {
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> config;
  std::filesystem::path out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::optional<int> chains;
  std::optional<int> iter_warmup;
  std::optional<int> iter_sampling;
  std::optional<double> grid_max;
  std::optional<std::string> population;
  std::vector<std::string> treatments;
  std::optional<std::string> reference;
  std::optional<int> threads;
  /// Upstream fit directories (predict, export-mvn: one; loo: one or more).
  std::vector<std::filesystem::path> fits;
  /// Model labels for the loo comparison, one per fit.
  std::vector<std::string> labels;
  /// Progress, notices and warnings.
  std::ostream* log = nullptr;
};

void run_knots(const CommandOptions& opts);
void run_fit(const CommandOptions& opts);
void run_predict(const CommandOptions& opts);
void run_loo(const CommandOptions& opts);
void run_prior_predictive(const CommandOptions& opts);
void run_export_mvn(const CommandOptions& opts);
void run_simulate(const CommandOptions& opts);

}  // namespace survnma
