#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace survnma {

/// One individual's outcome. Study and treatment are 0-based ids; treatment 0
/// is the network reference.
struct SurvivalRecord {
  int study = 0;
  int treatment = 0;
  double time = 0.0;
  bool event = false;
};

/// Individual-level event/censoring times over a network of studies.
///
/// Arms of a study are its treatments in increasing id order, so the arm-1
/// treatment of a study is the smallest treatment id it contains.
class SurvivalDataset {
 public:
  SurvivalDataset() = default;
  SurvivalDataset(std::vector<std::string> study_labels, std::vector<std::string> treatment_labels,
                  std::vector<SurvivalRecord> records,
                  std::vector<std::string> covariate_names = {},
                  Eigen::MatrixXd covariates = {});

  std::size_t size() const { return records_.size(); }
  int num_studies() const { return static_cast<int>(study_labels_.size()); }
  int num_treatments() const { return static_cast<int>(treatment_labels_.size()); }

  const std::vector<SurvivalRecord>& records() const { return records_; }
  const SurvivalRecord& record(std::size_t i) const { return records_[i]; }
  const std::vector<std::string>& study_labels() const { return study_labels_; }
  const std::vector<std::string>& treatment_labels() const { return treatment_labels_; }
  const std::vector<std::string>& covariate_names() const { return covariate_names_; }
  /// n x p, one row per record (empty when no covariates).
  const Eigen::MatrixXd& covariates() const { return covariates_; }
  int covariate_index(const std::string& name) const;

  int study_id(const std::string& label) const;
  int treatment_id(const std::string& label) const;

  /// Treatments in study j, ascending.
  const std::vector<int>& arms(int study) const { return arms_[static_cast<std::size_t>(study)]; }
  int arm_one(int study) const { return arms(study).front(); }
  bool has_arm(int study, int treatment) const;
  /// Position of a treatment within its study's arm list, or -1.
  int arm_position(int study, int treatment) const;

  /// Event (non-censored) times of a study, ascending.
  std::vector<double> event_times(int study) const;
  /// Largest event/censoring time in a study.
  double last_time(int study) const;
  double last_time() const;

  /// Record indices belonging to each study.
  const std::vector<std::size_t>& study_records(int study) const {
    return study_records_[static_cast<std::size_t>(study)];
  }

  /// Throws std::invalid_argument on structural problems: too few arms,
  /// negative or non-finite times, events at time 0, a disconnected network.
  void validate() const;

  /// Connected components of the treatment graph (treatment ids).
  std::vector<std::vector<int>> components() const;

  /// Human-readable network summary: studies, arms, events per arm.
  std::string summary() const;

  /// Subset with the given records removed (used for leave-one-out refits).
  SurvivalDataset without_record(std::size_t index) const;

 private:
  void index();

  std::vector<std::string> study_labels_;
  std::vector<std::string> treatment_labels_;
  std::vector<SurvivalRecord> records_;
  std::vector<std::string> covariate_names_;
  Eigen::MatrixXd covariates_;
  std::vector<std::vector<int>> arms_;
  std::vector<std::vector<std::size_t>> study_records_;
};

}  // namespace survnma
