#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dipole/tensor.hpp"

namespace dipole {

// Code and category identifiers with a total code -> category map. Code and
// category indices are dense: [0, n_codes()) and [0, n_categories()).
class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::vector<std::string> codes, std::vector<std::string> categories,
             std::vector<std::uint32_t> code_to_category);

  std::size_t n_codes() const { return codes_.size(); }
  std::size_t n_categories() const { return categories_.size(); }
  const std::string& code(std::size_t index) const { return codes_[index]; }
  const std::string& category(std::size_t index) const { return categories_[index]; }
  std::uint32_t category_of(std::size_t code_index) const { return code_to_category_[code_index]; }

  std::optional<std::uint32_t> find_code(std::string_view code) const;
  std::optional<std::uint32_t> find_category(std::string_view category) const;

  const std::vector<std::string>& codes() const { return codes_; }
  const std::vector<std::string>& categories() const { return categories_; }
  const std::vector<std::uint32_t>& code_to_category() const { return code_to_category_; }

  bool operator==(const Vocabulary& other) const {
    return codes_ == other.codes_ && categories_ == other.categories_ &&
           code_to_category_ == other.code_to_category_;
  }

 private:
  std::vector<std::string> codes_;
  std::vector<std::string> categories_;
  std::vector<std::uint32_t> code_to_category_;
  std::unordered_map<std::string, std::uint32_t> code_index_;
  std::unordered_map<std::string, std::uint32_t> category_index_;
};

// A non-empty set of code indices, kept sorted and duplicate-free.
class Visit {
 public:
  Visit() = default;
  explicit Visit(std::vector<std::uint32_t> codes);

  const std::vector<std::uint32_t>& codes() const { return codes_; }
  std::size_t size() const { return codes_.size(); }
  bool contains(std::uint32_t code) const;

  bool operator==(const Visit&) const = default;

 private:
  std::vector<std::uint32_t> codes_;
};

struct PatientRecord {
  std::string id;
  std::vector<Visit> visits;

  bool operator==(const PatientRecord&) const = default;
};

// Validated corpus: every visit index is < n_codes and every patient has
// at least two visits.
class CodedSequenceDataset {
 public:
  CodedSequenceDataset() = default;
  CodedSequenceDataset(Vocabulary vocabulary, std::vector<PatientRecord> patients);

  const Vocabulary& vocabulary() const { return vocabulary_; }
  const std::vector<PatientRecord>& patients() const { return patients_; }
  std::size_t size() const { return patients_.size(); }
  bool empty() const { return patients_.empty(); }

  bool operator==(const CodedSequenceDataset& other) const = default;

 private:
  Vocabulary vocabulary_;
  std::vector<PatientRecord> patients_;
};

// Multi-hot encoding of a visit over `size` codes. `context` (e.g.
// "patient P1 visit 3") is prefixed to the error on an out-of-range index.
Tensor encode_multihot(const Visit& visit, std::size_t size, std::string_view context = {});

// Category-level 0/1 target over the vocabulary's categories.
Tensor category_target(const Visit& visit, const Vocabulary& vocabulary);

struct SplitFractions {
  double train_fraction = 0.75;
  double validation_fraction = 0.10;
  double test_fraction = 0.15;
  std::uint64_t seed = 0;

  void validate() const;
};

struct DatasetSplit {
  CodedSequenceDataset train;
  CodedSequenceDataset validation;
  CodedSequenceDataset test;
};

// Patient-level random partition. Validation and test sizes are
// round(fraction * N); train takes the remainder. Patients keep their
// original relative order inside each part.
DatasetSplit split(const CodedSequenceDataset& dataset, const SplitFractions& fractions);

struct LoadOptions {
  std::size_t min_visits = 2;
};

struct LoadSummary {
  std::size_t patients_loaded = 0;
  std::size_t patients_rejected = 0;
  std::vector<std::string> rejected_ids;
  std::size_t duplicate_codes_dropped = 0;
};

struct LoadedCorpus {
  CodedSequenceDataset dataset;
  LoadSummary summary;
};

// Corpus text format:
//   #category <category>            (optional; fixes category order)
//   #code <code> <category>
//   <patient_id>\t<code>,<code>;<code>;...
// Other lines starting with '#' and blank lines are ignored.
LoadedCorpus read_corpus(std::istream& in, const LoadOptions& options = {},
                         std::string_view source = "<stream>");
LoadedCorpus load_corpus(const std::filesystem::path& path, const LoadOptions& options = {});
void write_corpus(std::ostream& out, const CodedSequenceDataset& dataset);
void save_corpus(const CodedSequenceDataset& dataset, const std::filesystem::path& path);

}  // namespace dipole
