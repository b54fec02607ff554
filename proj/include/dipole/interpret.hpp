#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dipole/ehr_data.hpp"
#include "dipole/model.hpp"

namespace dipole {

// Attention weights used when predicting the visit after step `step`.
struct AttentionTrace {
  std::string patient_id;
  std::size_t step = 0;              // t, 1-based, >= 2
  std::vector<double> weights;       // over visits 1..t-1
  std::vector<Visit> visits;         // visits 1..t for context
};

// Re-runs the model with dropout off. Requires an attentive variant and
// 2 <= step <= T-1.
AttentionTrace extract_attention(const Model& model, const PatientRecord& patient,
                                 const Vocabulary& vocabulary, std::size_t step);

struct DimensionEntry {
  std::uint32_t code = 0;
  double value = 0.0;
};

// Top codes of one embedding dimension, by ReLU(W_v^T) value descending.
struct DimensionReport {
  std::size_t dimension = 0;
  std::vector<DimensionEntry> entries;
};

// `embedding` is W_v [m x |C|]; ranks row `dimension` after ReLU, breaking
// ties by ascending code index.
DimensionReport interpret_dimension(const Tensor& embedding, std::size_t dimension, std::size_t k);

// TSV with header "patient_id\tt\tweights"; one row per attentive step
// (t = 2..T-1 of every patient), weights comma-separated.
void write_traces(std::ostream& out, const std::vector<AttentionTrace>& traces);
std::size_t export_traces(const Model& model, const CodedSequenceDataset& dataset,
                          const std::filesystem::path& path);
// Reads back (patient_id, step, weights); visits are left empty.
std::vector<AttentionTrace> import_traces(const std::filesystem::path& path);

// TSV with header "dimension\trank\tcode\tvalue".
void write_dimension_reports(std::ostream& out, const std::vector<DimensionReport>& reports,
                             const Vocabulary& vocabulary);

}  // namespace dipole
