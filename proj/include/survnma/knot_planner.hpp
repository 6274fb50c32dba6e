#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "survnma/dataset.hpp"
#include "survnma/spline_basis.hpp"

namespace survnma {

/// Sample quantile conventions (Hyndman & Fan numbering).
enum class QuantileRule {
  Weibull,  // type 6: position p(n+1)
  Linear,   // type 7: position 1 + p(n-1)
};

const char* to_string(QuantileRule rule);
QuantileRule quantile_rule_from_string(const std::string& name);

/// Quantile of ascending data under the given rule.
double sample_quantile(std::span<const double> sorted, double p, QuantileRule rule);

inline constexpr int kDefaultInternalKnots = 7;

struct KnotPlan {
  enum class Kind { PerStudy, Common };

  struct Override {
    double time = 0.0;
    std::optional<int> study;  // unset for common plans
  };

  struct Provenance {
    std::string scheme;  // "per_study_quantiles" or "quantiles_of_study_quantiles"
    QuantileRule rule = QuantileRule::Weibull;
    int requested_internal = kDefaultInternalKnots;
    std::vector<Override> overrides;
  };

  Kind kind = Kind::PerStudy;
  std::vector<KnotVector> per_study;  // indexed by study id
  KnotVector common;
  Provenance provenance;

  const KnotVector& for_study(int study) const;
  int num_studies() const { return static_cast<int>(per_study.size()); }
};

/// Internal knots at quantiles i/(L+1) of a study's event times; boundaries at
/// 0 and the study's last event/censoring time.
KnotVector plan_study_knots(const SurvivalDataset& data, int study, int n_internal,
                            QuantileRule rule = QuantileRule::Weibull);

/// Per-study quantiles pooled across studies, then the same quantile grid
/// applied to the pool; boundaries at 0 and the overall last time.
KnotVector plan_common_knots(const SurvivalDataset& data, int n_internal,
                             QuantileRule rule = QuantileRule::Weibull);

KnotPlan plan_per_study(const SurvivalDataset& data, int n_internal,
                        QuantileRule rule = QuantileRule::Weibull);
KnotPlan plan_common(const SurvivalDataset& data, int n_internal,
                     QuantileRule rule = QuantileRule::Weibull);

/// Inserts a manual internal knot. Per-study plans need the study id.
KnotPlan add_knot(const KnotPlan& plan, double time, std::optional<int> study = std::nullopt);

struct KnotWarning {
  int study = 0;
  double knot = 0.0;
  double last_time = 0.0;
  double distance = 0.0;
  double gap = 0.0;
  std::string message;
};

inline constexpr double kDefaultAuditFraction = 0.1;

/// Flags studies whose follow-up ends within `fraction` of an inter-knot gap
/// after an internal knot.
std::vector<KnotWarning> audit_knots(const KnotPlan& plan, const SurvivalDataset& data,
                                     double fraction = kDefaultAuditFraction);

struct KaplanMeierPoint {
  double time = 0.0;
  double survival = 1.0;
  int n_risk = 0;
  int n_event = 0;
  int n_censor = 0;
};

/// Product-limit estimate for one arm; first point is (0, 1).
std::vector<KaplanMeierPoint> kaplan_meier(const SurvivalDataset& data, int study, int treatment);
std::vector<KaplanMeierPoint> kaplan_meier(std::span<const double> times, std::span<const int> events);

}  // namespace survnma
