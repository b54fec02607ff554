#include "dipole/interpret.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "dipole/error.hpp"

namespace dipole {

AttentionTrace extract_attention(const Model& model, const PatientRecord& patient,
                                 const Vocabulary& vocabulary, std::size_t step) {
  if (!attention_kind(model.config().variant)) {
    throw UnsupportedVariant("extract_attention: variant " + to_string(model.config().variant) +
                             " has no attention");
  }
  const std::size_t T = patient.visits.size();
  if (step < 2 || step + 1 > T) {
    throw ContractError("extract_attention: step " + std::to_string(step) + " outside [2, " +
                        std::to_string(T >= 1 ? T - 1 : 0) + "] for patient " + patient.id);
  }
  const auto records = model.predict(patient, vocabulary);
  AttentionTrace trace;
  trace.patient_id = patient.id;
  trace.step = step;
  trace.weights = records[step - 1].attention;
  trace.visits.assign(patient.visits.begin(), patient.visits.begin() + static_cast<std::ptrdiff_t>(step));
  return trace;
}

DimensionReport interpret_dimension(const Tensor& embedding, std::size_t dimension, std::size_t k) {
  if (embedding.rank() != 2) throw DimensionError("interpret_dimension: expected W_v matrix");
  if (dimension >= embedding.rows()) {
    throw ContractError("interpret_dimension: dimension " + std::to_string(dimension) + " outside [0, " +
                        std::to_string(embedding.rows()) + ")");
  }
  const std::size_t n_codes = embedding.cols();
  if (k > n_codes) {
    throw ContractError("interpret_dimension: k = " + std::to_string(k) + " exceeds " +
                        std::to_string(n_codes) + " codes");
  }
  std::vector<double> values(n_codes);
  for (std::size_t c = 0; c < n_codes; ++c) values[c] = std::max(0.0, embedding.at(dimension, c));
  std::vector<std::uint32_t> order(n_codes);
  std::iota(order.begin(), order.end(), 0u);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::uint32_t a, std::uint32_t b) {
                      return values[a] != values[b] ? values[a] > values[b] : a < b;
                    });
  DimensionReport report;
  report.dimension = dimension;
  for (std::size_t i = 0; i < k; ++i) report.entries.push_back({order[i], values[order[i]]});
  return report;
}

void write_traces(std::ostream& out, const std::vector<AttentionTrace>& traces) {
  out << "patient_id\tt\tweights\n";
  char buf[32];
  for (const AttentionTrace& trace : traces) {
    out << trace.patient_id << '\t' << trace.step << '\t';
    for (std::size_t i = 0; i < trace.weights.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.9f", trace.weights[i]);
      if (i) out << ',';
      out << buf;
    }
    out << '\n';
  }
}

std::size_t export_traces(const Model& model, const CodedSequenceDataset& dataset,
                          const std::filesystem::path& path) {
  if (!attention_kind(model.config().variant)) {
    throw UnsupportedVariant("export_traces: variant " + to_string(model.config().variant) +
                             " has no attention");
  }
  std::vector<AttentionTrace> traces;
  for (const PatientRecord& patient : dataset.patients()) {
    const auto records = model.predict(patient, dataset.vocabulary());
    for (const PredictionRecord& r : records) {
      if (r.step < 2) continue;
      traces.push_back({patient.id, r.step, r.attention, {}});
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write traces file " + path.string());
  write_traces(out, traces);
  return traces.size();
}

std::vector<AttentionTrace> import_traces(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open traces file " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "patient_id\tt\tweights") throw DataError(path.string() + ": unexpected header");
  std::vector<AttentionTrace> traces;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    AttentionTrace trace;
    std::string step, weights;
    if (!std::getline(fields, trace.patient_id, '\t') || !std::getline(fields, step, '\t') ||
        !std::getline(fields, weights)) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 3 columns");
    }
    try {
      trace.step = std::stoul(step);
      std::istringstream ws(weights);
      std::string w;
      while (std::getline(ws, w, ',')) trace.weights.push_back(std::stod(w));
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed number");
    }
    traces.push_back(std::move(trace));
  }
  return traces;
}

void write_dimension_reports(std::ostream& out, const std::vector<DimensionReport>& reports,
                             const Vocabulary& vocabulary) {
  out << "dimension\trank\tcode\tvalue\n";
  char buf[32];
  for (const DimensionReport& report : reports) {
    for (std::size_t i = 0; i < report.entries.size(); ++i) {
      const DimensionEntry& e = report.entries[i];
      std::snprintf(buf, sizeof buf, "%.9g", e.value);
      out << report.dimension << '\t' << i + 1 << '\t' << vocabulary.code(e.code) << '\t' << buf << '\n';
    }
  }
}

}  // namespace dipole
