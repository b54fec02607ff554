#include "dipole/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "dipole/error.hpp"

namespace dipole {

std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  k = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
                    });
  order.resize(k);
  return order;
}

namespace {

std::size_t popcount(const PredictionRecord& r) {
  return static_cast<std::size_t>(std::count(r.truth.begin(), r.truth.end(), 1));
}

std::size_t hits_in_top(const PredictionRecord& r, std::size_t k) {
  if (r.scores.size() != r.truth.size()) {
    throw ContractError("metrics: record for " + r.patient_id + " has " + std::to_string(r.scores.size()) +
                        " scores but " + std::to_string(r.truth.size()) + " truth entries");
  }
  std::size_t hits = 0;
  for (std::size_t i : top_k_indices(r.scores, k)) hits += r.truth[i];
  return hits;
}

std::size_t checked_popcount(const PredictionRecord& r) {
  const std::size_t n = popcount(r);
  if (n == 0) throw ContractError("metrics: record for " + r.patient_id + " has an empty truth set");
  return n;
}

double record_accuracy(const PredictionRecord& r) {
  const std::size_t k = checked_popcount(r);
  return static_cast<double>(hits_in_top(r, k)) / static_cast<double>(k);
}

}  // namespace

AccuracyResult accuracy(std::span<const PredictionRecord> records) {
  AccuracyResult result;
  double sum = 0.0;
  for (const PredictionRecord& r : records) {
    const std::size_t k = checked_popcount(r);
    const std::size_t hits = hits_in_top(r, k);
    result.correct_count += hits;
    sum += static_cast<double>(hits) / static_cast<double>(k);
  }
  if (!records.empty()) result.accuracy = sum / static_cast<double>(records.size());
  return result;
}

double accuracy_at_k(std::span<const PredictionRecord> records, std::size_t k) {
  if (k == 0) throw ContractError("accuracy_at_k: k must be positive");
  double sum = 0.0;
  for (const PredictionRecord& r : records) {
    const std::size_t denom = std::min(k, checked_popcount(r));
    sum += static_cast<double>(hits_in_top(r, k)) / static_cast<double>(denom);
  }
  return records.empty() ? 0.0 : sum / static_cast<double>(records.size());
}

std::vector<GroupRow> group_weighted_accuracy(std::span<const PredictionRecord> records,
                                              std::size_t divisor) {
  if (divisor == 0) throw ContractError("group_weighted_accuracy: divisor must be positive");
  struct PatientAcc {
    std::size_t visits = 0;
    double sum = 0.0;
    std::size_t count = 0;
  };
  std::map<std::string, PatientAcc> patients;
  for (const PredictionRecord& r : records) {
    PatientAcc& p = patients[r.patient_id];
    p.visits = r.patient_visits;
    p.sum += record_accuracy(r);
    ++p.count;
  }
  // group -> visit count n -> (sum of patient accuracies, C_n, predictions)
  struct Cell {
    double sum = 0.0;
    std::size_t patients = 0;
    std::size_t predictions = 0;
  };
  std::map<std::size_t, std::map<std::size_t, Cell>> cells;
  for (const auto& [id, p] : patients) {
    Cell& c = cells[p.visits / divisor][p.visits];
    c.sum += p.sum / static_cast<double>(p.count);
    ++c.patients;
    c.predictions += p.count;
  }
  std::vector<GroupRow> rows;
  for (const auto& [group, by_n] : cells) {
    GroupRow row;
    row.group = group;
    double weighted = 0.0;
    for (const auto& [n, c] : by_n) {
      const double ma_n = c.sum / static_cast<double>(c.patients);
      weighted += ma_n * static_cast<double>(c.patients);
      row.patients += c.patients;
      row.predictions += c.predictions;
    }
    row.weighted_accuracy = weighted / static_cast<double>(row.patients);
    rows.push_back(row);
  }
  return rows;
}

EvalReport evaluate(std::span<const PredictionRecord> records, std::size_t group_divisor) {
  EvalReport report;
  report.n_predictions = records.size();
  const AccuracyResult acc = accuracy(records);
  report.correct_count = acc.correct_count;
  report.accuracy = acc.accuracy;
  for (std::size_t k : kAccuracyAtK) report.accuracy_at.emplace_back(k, accuracy_at_k(records, k));
  report.group_divisor = group_divisor;
  if (group_divisor > 0) report.groups = group_weighted_accuracy(records, group_divisor);
  return report;
}

std::string format_report(const std::string& label, const EvalReport& report) {
  const std::vector<LabelledReport> rows{{label, report}};
  return format_reports(rows);
}

std::string format_reports(std::span<const LabelledReport> rows) {
  if (rows.empty()) throw ContractError("format_reports: no rows");
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-14s %10s %10s %10s", "method", "predictions", "#C", "accuracy");
  out << buf;
  for (const auto& [k, v] : rows.front().report.accuracy_at) {
    std::snprintf(buf, sizeof buf, " %8s", ("acc@" + std::to_string(k)).c_str());
    out << buf;
  }
  out << '\n';
  for (const auto& [label, report] : rows) {
    std::snprintf(buf, sizeof buf, "%-14s %10zu %10zu %10.4f", label.c_str(), report.n_predictions,
                  report.correct_count, report.accuracy);
    out << buf;
    for (const auto& [k, v] : report.accuracy_at) {
      std::snprintf(buf, sizeof buf, " %8.4f", v);
      out << buf;
    }
    out << '\n';
  }
  for (const auto& [label, report] : rows) {
    if (report.groups.empty()) continue;
    out << '\n' << label << " by visit count\n";
    std::snprintf(buf, sizeof buf, "%-8s %-12s %10s %12s %10s\n", "group", "visits", "patients",
                  "predictions", "accuracy");
    out << buf;
    for (const GroupRow& row : report.groups) {
      const std::size_t lo = row.group * report.group_divisor;
      const std::string range = std::to_string(lo) + "-" + std::to_string(lo + report.group_divisor - 1);
      std::snprintf(buf, sizeof buf, "%-8zu %-12s %10zu %12zu %10.4f\n", row.group, range.c_str(),
                    row.patients, row.predictions, row.weighted_accuracy);
      out << buf;
    }
  }
  return out.str();
}

}  // namespace dipole
