#include "survnma/knot_planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace survnma {

const char* to_string(QuantileRule rule) {
  switch (rule) {
    case QuantileRule::Weibull: return "weibull";
    case QuantileRule::Linear: return "linear";
  }
  return "?";
}

QuantileRule quantile_rule_from_string(const std::string& name) {
  if (name == "weibull" || name == "type6") return QuantileRule::Weibull;
  if (name == "linear" || name == "type7") return QuantileRule::Linear;
  throw std::invalid_argument("unknown quantile rule: " + name);
}

double sample_quantile(std::span<const double> sorted, double p, QuantileRule rule) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty data");
  const auto n = static_cast<double>(sorted.size());
  // 1-based fractional position.
  const double h = rule == QuantileRule::Weibull ? p * (n + 1.0) : 1.0 + p * (n - 1.0);
  if (h <= 1.0) return sorted.front();
  if (h >= n) return sorted.back();
  const double lo = std::floor(h);
  const auto i = static_cast<std::size_t>(lo) - 1;
  return sorted[i] + (h - lo) * (sorted[i + 1] - sorted[i]);
}

const KnotVector& KnotPlan::for_study(int study) const {
  if (kind == Kind::Common) return common;
  return per_study.at(static_cast<std::size_t>(study));
}

namespace {

std::size_t count_distinct(const std::vector<double>& sorted) {
  if (sorted.empty()) return 0;
  std::size_t n = 1;
  for (std::size_t i = 1; i < sorted.size(); ++i) n += sorted[i] > sorted[i - 1] ? 1 : 0;
  return n;
}

double min_positive_gap(const std::vector<double>& sorted) {
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    const double d = sorted[i] - sorted[i - 1];
    if (d > 0.0) gap = std::min(gap, d);
  }
  return gap;
}

std::vector<double> quantile_grid(const std::vector<double>& sorted, int n_internal,
                                  QuantileRule rule) {
  std::vector<double> q;
  q.reserve(static_cast<std::size_t>(n_internal));
  for (int i = 1; i <= n_internal; ++i) {
    q.push_back(sample_quantile(sorted, static_cast<double>(i) / (n_internal + 1), rule));
  }
  return q;
}

// Separates colliding knots by a fraction of the data's time resolution.
std::vector<double> separate(std::vector<double> knots, double resolution, double lower,
                             double upper, const std::string& context) {
  const double step = resolution / static_cast<double>(knots.size() + 1);
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (knots[i] <= knots[i - 1]) knots[i] = knots[i - 1] + step;
  }
  if (!knots.empty() && (knots.front() <= lower || knots.back() >= upper)) {
    throw std::invalid_argument(context +
                                ": cannot place strictly increasing internal knots; "
                                "try fewer internal knots");
  }
  return knots;
}

}  // namespace

KnotVector plan_study_knots(const SurvivalDataset& data, int study, int n_internal,
                            QuantileRule rule) {
  if (n_internal < 0) throw std::invalid_argument("number of internal knots must be >= 0");
  const auto& label = data.study_labels().at(static_cast<std::size_t>(study));
  const auto events = data.event_times(study);
  const auto distinct = count_distinct(events);
  if (distinct < static_cast<std::size_t>(n_internal) + 1) {
    std::ostringstream msg;
    msg << "study '" << label << "' has " << distinct << " distinct event times, need at least "
        << n_internal + 1 << " for " << n_internal
        << " internal knots; use a smaller number of knots";
    throw std::invalid_argument(msg.str());
  }
  const double upper = data.last_time(study);
  auto internal = separate(quantile_grid(events, n_internal, rule), min_positive_gap(events), 0.0,
                           upper, "study '" + label + "'");
  KnotVector knots(0.0, std::move(internal), upper);
  knots.validate();
  return knots;
}

KnotVector plan_common_knots(const SurvivalDataset& data, int n_internal, QuantileRule rule) {
  if (n_internal < 0) throw std::invalid_argument("number of internal knots must be >= 0");
  std::vector<double> pooled;
  double resolution = std::numeric_limits<double>::infinity();
  for (int j = 0; j < data.num_studies(); ++j) {
    const auto events = data.event_times(j);
    if (count_distinct(events) < 2) {
      throw std::invalid_argument("study '" + data.study_labels()[static_cast<std::size_t>(j)] +
                                  "' has fewer than 2 distinct event times");
    }
    resolution = std::min(resolution, min_positive_gap(events));
    const auto q = quantile_grid(events, n_internal, rule);
    pooled.insert(pooled.end(), q.begin(), q.end());
  }
  std::sort(pooled.begin(), pooled.end());
  const double upper = data.last_time();
  std::vector<double> internal;
  if (n_internal > 0) {
    internal = separate(quantile_grid(pooled, n_internal, rule), resolution, 0.0, upper,
                        "common knots");
  }
  KnotVector knots(0.0, std::move(internal), upper);
  knots.validate();
  return knots;
}

KnotPlan plan_per_study(const SurvivalDataset& data, int n_internal, QuantileRule rule) {
  KnotPlan plan;
  plan.kind = KnotPlan::Kind::PerStudy;
  plan.provenance = {"per_study_quantiles", rule, n_internal, {}};
  for (int j = 0; j < data.num_studies(); ++j) {
    plan.per_study.push_back(plan_study_knots(data, j, n_internal, rule));
  }
  return plan;
}

KnotPlan plan_common(const SurvivalDataset& data, int n_internal, QuantileRule rule) {
  KnotPlan plan;
  plan.kind = KnotPlan::Kind::Common;
  plan.provenance = {"quantiles_of_study_quantiles", rule, n_internal, {}};
  plan.common = plan_common_knots(data, n_internal, rule);
  plan.per_study.assign(static_cast<std::size_t>(data.num_studies()), plan.common);
  return plan;
}

namespace {

KnotVector insert_knot(const KnotVector& knots, double time) {
  const double tol = 1e-12 * std::abs(knots.upper);
  if (!(time > knots.lower + tol && time < knots.upper - tol)) {
    std::ostringstream msg;
    msg << "add_knot: time " << time << " is not strictly inside (" << knots.lower << ", "
        << knots.upper << ")";
    throw std::invalid_argument(msg.str());
  }
  for (double k : knots.internal) {
    if (std::abs(k - time) <= tol) {
      std::ostringstream msg;
      msg << "add_knot: a knot already exists at " << time;
      throw std::invalid_argument(msg.str());
    }
  }
  KnotVector out = knots;
  out.internal.insert(std::upper_bound(out.internal.begin(), out.internal.end(), time), time);
  out.validate();
  return out;
}

}  // namespace

KnotPlan add_knot(const KnotPlan& plan, double time, std::optional<int> study) {
  KnotPlan out = plan;
  if (plan.kind == KnotPlan::Kind::Common) {
    out.common = insert_knot(plan.common, time);
    for (auto& k : out.per_study) k = out.common;
    out.provenance.overrides.push_back({time, std::nullopt});
  } else {
    if (!study) throw std::invalid_argument("add_knot: per-study plans need a study id");
    auto& k = out.per_study.at(static_cast<std::size_t>(*study));
    k = insert_knot(k, time);
    out.provenance.overrides.push_back({time, study});
  }
  return out;
}

std::vector<KnotWarning> audit_knots(const KnotPlan& plan, const SurvivalDataset& data,
                                     double fraction) {
  std::vector<KnotWarning> warnings;
  for (int j = 0; j < data.num_studies(); ++j) {
    const auto& knots = plan.for_study(j);
    const double last = data.last_time(j);
    for (std::size_t i = 0; i < knots.internal.size(); ++i) {
      const double knot = knots.internal[i];
      const double next = i + 1 < knots.internal.size() ? knots.internal[i + 1] : knots.upper;
      const double gap = next - knot;
      const double distance = last - knot;
      if (distance > 0.0 && distance <= fraction * gap) {
        std::ostringstream msg;
        msg << "study '" << data.study_labels()[static_cast<std::size_t>(j)]
            << "': follow-up ends at " << last << ", " << distance << " after internal knot "
            << knot << " (" << 100.0 * distance / gap
            << "% of the inter-knot gap); consider moving or adding a knot";
        warnings.push_back({j, knot, last, distance, gap, msg.str()});
      }
    }
  }
  return warnings;
}

std::vector<KaplanMeierPoint> kaplan_meier(std::span<const double> times,
                                           std::span<const int> events) {
  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
  std::vector<KaplanMeierPoint> out{{0.0, 1.0, static_cast<int>(times.size()), 0, 0}};
  int at_risk = static_cast<int>(times.size());
  double surv = 1.0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double t = times[order[i]];
    int d = 0, c = 0;
    while (i < order.size() && times[order[i]] == t) {
      (events[order[i]] ? d : c) += 1;
      ++i;
    }
    if (d > 0) surv *= 1.0 - static_cast<double>(d) / at_risk;
    out.push_back({t, surv, at_risk, d, c});
    at_risk -= d + c;
  }
  return out;
}

std::vector<KaplanMeierPoint> kaplan_meier(const SurvivalDataset& data, int study, int treatment) {
  std::vector<double> times;
  std::vector<int> events;
  for (auto i : data.study_records(study)) {
    const auto& r = data.record(i);
    if (r.treatment != treatment) continue;
    times.push_back(r.time);
    events.push_back(r.event ? 1 : 0);
  }
  return kaplan_meier(times, events);
}

}  // namespace survnma
