#include "survnma/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace survnma {

SurvivalDataset::SurvivalDataset(std::vector<std::string> study_labels,
                                 std::vector<std::string> treatment_labels,
                                 std::vector<SurvivalRecord> records,
                                 std::vector<std::string> covariate_names,
                                 Eigen::MatrixXd covariates)
    : study_labels_(std::move(study_labels)),
      treatment_labels_(std::move(treatment_labels)),
      records_(std::move(records)),
      covariate_names_(std::move(covariate_names)),
      covariates_(std::move(covariates)) {
  if (!covariate_names_.empty() &&
      (covariates_.rows() != static_cast<Eigen::Index>(records_.size()) ||
       covariates_.cols() != static_cast<Eigen::Index>(covariate_names_.size()))) {
    throw std::invalid_argument("covariate matrix shape does not match records/names");
  }
  if (covariate_names_.empty()) covariates_.resize(static_cast<Eigen::Index>(records_.size()), 0);
  index();
}

void SurvivalDataset::index() {
  arms_.assign(study_labels_.size(), {});
  study_records_.assign(study_labels_.size(), {});
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (r.study < 0 || r.study >= num_studies() || r.treatment < 0 ||
        r.treatment >= num_treatments()) {
      throw std::invalid_argument("record " + std::to_string(i) + " has an unknown study/treatment id");
    }
    auto& a = arms_[static_cast<std::size_t>(r.study)];
    if (std::find(a.begin(), a.end(), r.treatment) == a.end()) a.push_back(r.treatment);
    study_records_[static_cast<std::size_t>(r.study)].push_back(i);
  }
  for (auto& a : arms_) std::sort(a.begin(), a.end());
}

int SurvivalDataset::covariate_index(const std::string& name) const {
  auto it = std::find(covariate_names_.begin(), covariate_names_.end(), name);
  if (it == covariate_names_.end()) throw std::invalid_argument("unknown covariate: " + name);
  return static_cast<int>(it - covariate_names_.begin());
}

int SurvivalDataset::study_id(const std::string& label) const {
  auto it = std::find(study_labels_.begin(), study_labels_.end(), label);
  if (it == study_labels_.end()) throw std::invalid_argument("unknown study: " + label);
  return static_cast<int>(it - study_labels_.begin());
}

int SurvivalDataset::treatment_id(const std::string& label) const {
  auto it = std::find(treatment_labels_.begin(), treatment_labels_.end(), label);
  if (it == treatment_labels_.end()) throw std::invalid_argument("unknown treatment: " + label);
  return static_cast<int>(it - treatment_labels_.begin());
}

bool SurvivalDataset::has_arm(int study, int treatment) const {
  return arm_position(study, treatment) >= 0;
}

int SurvivalDataset::arm_position(int study, int treatment) const {
  const auto& a = arms(study);
  auto it = std::find(a.begin(), a.end(), treatment);
  return it == a.end() ? -1 : static_cast<int>(it - a.begin());
}

std::vector<double> SurvivalDataset::event_times(int study) const {
  std::vector<double> out;
  for (auto i : study_records(study)) {
    if (records_[i].event) out.push_back(records_[i].time);
  }
  std::sort(out.begin(), out.end());
  return out;
}

double SurvivalDataset::last_time(int study) const {
  double t = 0.0;
  for (auto i : study_records(study)) t = std::max(t, records_[i].time);
  return t;
}

double SurvivalDataset::last_time() const {
  double t = 0.0;
  for (const auto& r : records_) t = std::max(t, r.time);
  return t;
}

std::vector<std::vector<int>> SurvivalDataset::components() const {
  const auto k = static_cast<std::size_t>(num_treatments());
  std::vector<int> parent(k);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  for (const auto& a : arms_) {
    for (std::size_t i = 1; i < a.size(); ++i) {
      parent[static_cast<std::size_t>(find(a[i]))] = find(a[0]);
    }
  }
  std::vector<std::vector<int>> groups;
  std::vector<int> root_to_group(k, -1);
  for (int t = 0; t < static_cast<int>(k); ++t) {
    const int r = find(t);
    auto& g = root_to_group[static_cast<std::size_t>(r)];
    if (g < 0) {
      g = static_cast<int>(groups.size());
      groups.emplace_back();
    }
    groups[static_cast<std::size_t>(g)].push_back(t);
  }
  return groups;
}

void SurvivalDataset::validate() const {
  if (study_labels_.empty()) throw std::invalid_argument("dataset has no studies");
  if (treatment_labels_.empty()) throw std::invalid_argument("dataset has no treatments");
  for (int j = 0; j < num_studies(); ++j) {
    if (arms(j).size() < 2) {
      throw std::invalid_argument("study '" + study_labels_[static_cast<std::size_t>(j)] +
                                  "' has fewer than two arms");
    }
  }
  std::vector<bool> seen(static_cast<std::size_t>(num_treatments()), false);
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    seen[static_cast<std::size_t>(r.treatment)] = true;
    if (!std::isfinite(r.time) || r.time < 0.0) {
      throw std::invalid_argument("record " + std::to_string(i) + ": time must be finite and >= 0");
    }
    if (r.event && r.time <= 0.0) {
      throw std::invalid_argument("record " + std::to_string(i) + ": event at time 0 is not allowed");
    }
  }
  for (std::size_t t = 0; t < seen.size(); ++t) {
    if (!seen[t]) throw std::invalid_argument("treatment '" + treatment_labels_[t] + "' has no records");
  }
  const auto groups = components();
  if (groups.size() > 1) {
    std::ostringstream msg;
    msg << "network is disconnected into " << groups.size() << " components:";
    for (const auto& g : groups) {
      msg << " {";
      for (std::size_t i = 0; i < g.size(); ++i) {
        msg << (i ? ", " : "") << treatment_labels_[static_cast<std::size_t>(g[i])];
      }
      msg << "}";
    }
    throw std::invalid_argument(msg.str());
  }
}

std::string SurvivalDataset::summary() const {
  std::ostringstream out;
  out << "Network: J=" << num_studies() << " studies, K=" << num_treatments()
      << " treatments, n=" << size() << " individuals\n";
  out << "Reference treatment: " << treatment_labels_.front() << "\n";
  for (int j = 0; j < num_studies(); ++j) {
    out << "  " << study_labels_[static_cast<std::size_t>(j)] << ":";
    for (int k : arms(j)) {
      std::size_t n = 0, events = 0;
      for (auto i : study_records(j)) {
        if (records_[i].treatment == k) {
          ++n;
          events += records_[i].event ? 1 : 0;
        }
      }
      out << " " << treatment_labels_[static_cast<std::size_t>(k)] << " (n=" << n
          << ", events=" << events << ")";
    }
    out << "\n";
  }
  return out.str();
}

SurvivalDataset SurvivalDataset::without_record(std::size_t index) const {
  std::vector<SurvivalRecord> recs;
  recs.reserve(records_.size() - 1);
  Eigen::MatrixXd cov(static_cast<Eigen::Index>(records_.size() - 1), covariates_.cols());
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (i == index) continue;
    recs.push_back(records_[i]);
    if (cov.cols() > 0) cov.row(row) = covariates_.row(static_cast<Eigen::Index>(i));
    ++row;
  }
  return SurvivalDataset(study_labels_, treatment_labels_, std::move(recs), covariate_names_,
                         covariate_names_.empty() ? Eigen::MatrixXd() : cov);
}

}  // namespace survnma
