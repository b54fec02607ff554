#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dipole/model.hpp"

namespace dipole {

inline constexpr std::array<std::size_t, 6> kAccuracyAtK{5, 10, 15, 20, 25, 30};

// Indices of the k largest scores, best first; equal scores are ordered by
// ascending index.
std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k);

struct AccuracyResult {
  std::size_t correct_count = 0;
  double accuracy = 0.0;
};

// Per record: k = |y|, correct = |top-k ∩ y|, accuracy = correct / k.
// Overall accuracy is the mean over records.
AccuracyResult accuracy(std::span<const PredictionRecord> records);

// Mean over records of |top-k ∩ y| / min(k, |y|).
double accuracy_at_k(std::span<const PredictionRecord> records, std::size_t k);

struct GroupRow {
  std::size_t group = 0;  // floor(patient visit count / divisor)
  std::size_t patients = 0;
  std::size_t predictions = 0;
  double weighted_accuracy = 0.0;
};

// Patients are grouped by floor(T / divisor). Within a group, the mean
// accuracy MA_n of patients with n visits is weighted by their count C_n:
// sum(MA_n * C_n) / sum(C_n). Rows are ordered by group.
std::vector<GroupRow> group_weighted_accuracy(std::span<const PredictionRecord> records,
                                              std::size_t divisor);

struct EvalReport {
  std::size_t n_predictions = 0;
  std::size_t correct_count = 0;
  double accuracy = 0.0;
  std::vector<std::pair<std::size_t, double>> accuracy_at;  // (k, value) for kAccuracyAtK
  std::size_t group_divisor = 0;
  std::vector<GroupRow> groups;
};

EvalReport evaluate(std::span<const PredictionRecord> records, std::size_t group_divisor);

// Plain-text table: one row for `label` with #C, accuracy and
// accuracy@k columns, followed by the visit-count group table.
std::string format_report(const std::string& label, const EvalReport& report);

struct LabelledReport {
  std::string label;
  EvalReport report;
};
// Several methods in one table (one row each), then one group table per
// method.
std::string format_reports(std::span<const LabelledReport> rows);

}  // namespace dipole
