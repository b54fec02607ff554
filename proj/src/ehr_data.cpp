#include "dipole/ehr_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "dipole/error.hpp"
#include "dipole/rng.hpp"

namespace dipole {

Vocabulary::Vocabulary(std::vector<std::string> codes, std::vector<std::string> categories,
                       std::vector<std::uint32_t> code_to_category)
    : codes_(std::move(codes)),
      categories_(std::move(categories)),
      code_to_category_(std::move(code_to_category)) {
  if (code_to_category_.size() != codes_.size()) {
    throw DataError("vocabulary: " + std::to_string(codes_.size()) + " codes but " +
                    std::to_string(code_to_category_.size()) + " category assignments");
  }
  if (categories_.size() > codes_.size()) {
    throw DataError("vocabulary: more categories (" + std::to_string(categories_.size()) +
                    ") than codes (" + std::to_string(codes_.size()) + ")");
  }
  for (std::uint32_t i = 0; i < categories_.size(); ++i) {
    if (!category_index_.emplace(categories_[i], i).second) {
      throw DataError("vocabulary: duplicate category '" + categories_[i] + "'");
    }
  }
  for (std::uint32_t i = 0; i < codes_.size(); ++i) {
    if (!code_index_.emplace(codes_[i], i).second) {
      throw DataError("vocabulary: duplicate code '" + codes_[i] + "'");
    }
    if (code_to_category_[i] >= categories_.size()) {
      throw DataError("vocabulary: code '" + codes_[i] + "' maps to unknown category index " +
                      std::to_string(code_to_category_[i]));
    }
  }
}

std::optional<std::uint32_t> Vocabulary::find_code(std::string_view code) const {
  auto it = code_index_.find(std::string(code));
  if (it == code_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::uint32_t> Vocabulary::find_category(std::string_view category) const {
  auto it = category_index_.find(std::string(category));
  if (it == category_index_.end()) return std::nullopt;
  return it->second;
}

Visit::Visit(std::vector<std::uint32_t> codes) : codes_(std::move(codes)) {
  std::sort(codes_.begin(), codes_.end());
  codes_.erase(std::unique(codes_.begin(), codes_.end()), codes_.end());
  if (codes_.empty()) throw DataError("visit: no codes");
}

bool Visit::contains(std::uint32_t code) const {
  return std::binary_search(codes_.begin(), codes_.end(), code);
}

CodedSequenceDataset::CodedSequenceDataset(Vocabulary vocabulary, std::vector<PatientRecord> patients)
    : vocabulary_(std::move(vocabulary)), patients_(std::move(patients)) {
  const std::size_t n_codes = vocabulary_.n_codes();
  for (const PatientRecord& p : patients_) {
    if (p.visits.size() < 2) {
      throw DataError("patient " + p.id + ": " + std::to_string(p.visits.size()) +
                      " visit(s), at least 2 required");
    }
    for (std::size_t v = 0; v < p.visits.size(); ++v) {
      const auto& codes = p.visits[v].codes();
      if (codes.empty()) throw DataError("patient " + p.id + " visit " + std::to_string(v + 1) + ": empty");
      if (codes.back() >= n_codes) {
        throw DataError("patient " + p.id + " visit " + std::to_string(v + 1) + ": code index " +
                        std::to_string(codes.back()) + " outside vocabulary of " +
                        std::to_string(n_codes));
      }
    }
  }
}

Tensor encode_multihot(const Visit& visit, std::size_t size, std::string_view context) {
  Tensor x({size});
  for (std::uint32_t c : visit.codes()) {
    if (c >= size) {
      std::string where = context.empty() ? std::string("visit") : std::string(context);
      throw DataError(where + ": code index " + std::to_string(c) + " out of range for " +
                      std::to_string(size) + " codes");
    }
    x[c] = 1.0;
  }
  return x;
}

Tensor category_target(const Visit& visit, const Vocabulary& vocabulary) {
  Tensor y({vocabulary.n_categories()});
  for (std::uint32_t c : visit.codes()) {
    if (c >= vocabulary.n_codes()) {
      throw DataError("category_target: code index " + std::to_string(c) +
                      " has no category mapping");
    }
    y[vocabulary.category_of(c)] = 1.0;
  }
  return y;
}

void SplitFractions::validate() const {
  for (double f : {train_fraction, validation_fraction, test_fraction}) {
    if (!(f > 0.0 && f < 1.0)) throw ConfigError("split: each fraction must lie in (0, 1)");
  }
  if (std::abs(train_fraction + validation_fraction + test_fraction - 1.0) > 1e-9) {
    throw ConfigError("split: fractions must sum to 1");
  }
}

DatasetSplit split(const CodedSequenceDataset& dataset, const SplitFractions& fractions) {
  fractions.validate();
  const std::size_t n = dataset.size();
  if (n == 0) throw ConfigError("split: dataset is empty");
  const auto n_val = static_cast<std::size_t>(std::llround(fractions.validation_fraction * n));
  const auto n_test = static_cast<std::size_t>(std::llround(fractions.test_fraction * n));
  if (n_val == 0 || n_test == 0 || n_val + n_test >= n) {
    throw ConfigError("split: " + std::to_string(n) + " patients leave an empty split (" +
                      std::to_string(n - std::min(n, n_val + n_test)) + "/" + std::to_string(n_val) +
                      "/" + std::to_string(n_test) + ")");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(fractions.seed);
  rng.shuffle(order);
  // part[i]: 0 train, 1 validation, 2 test
  std::vector<int> part(n, 0);
  for (std::size_t i = 0; i < n_val; ++i) part[order[i]] = 1;
  for (std::size_t i = n_val; i < n_val + n_test; ++i) part[order[i]] = 2;
  std::vector<PatientRecord> buckets[3];
  for (std::size_t i = 0; i < n; ++i) buckets[part[i]].push_back(dataset.patients()[i]);
  const Vocabulary& vocab = dataset.vocabulary();
  return {CodedSequenceDataset(vocab, std::move(buckets[0])),
          CodedSequenceDataset(vocab, std::move(buckets[1])),
          CodedSequenceDataset(vocab, std::move(buckets[2]))};
}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_on(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

}  // namespace

LoadedCorpus read_corpus(std::istream& in, const LoadOptions& options, std::string_view source) {
  if (options.min_visits < 2) throw ConfigError("load: min_visits must be at least 2");
  auto fail = [&](std::size_t line, const std::string& msg) -> DataError {
    return DataError(std::string(source) + ":" + std::to_string(line) + ": " + msg);
  };

  std::vector<std::string> codes, categories;
  std::vector<std::uint32_t> code_to_category;
  std::unordered_map<std::string, std::uint32_t> code_index, category_index;
  auto intern_category = [&](std::string_view name) {
    auto [it, inserted] = category_index.emplace(std::string(name), categories.size());
    if (inserted) categories.emplace_back(name);
    return it->second;
  };

  LoadSummary summary;
  std::vector<PatientRecord> patients;
  std::unordered_set<std::string> seen_ids;
  bool in_body = false;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty()) continue;
    if (line.front() == '#') {
      std::istringstream fields{std::string(line)};
      std::string directive, a, b, extra;
      fields >> directive >> a >> b >> extra;
      if (directive == "#code") {
        if (in_body) throw fail(line_no, "#code declaration after patient records");
        if (a.empty() || b.empty() || !extra.empty()) {
          throw fail(line_no, "expected '#code <code> <category>'");
        }
        if (code_index.contains(a)) throw fail(line_no, "duplicate code '" + a + "'");
        code_index.emplace(a, codes.size());
        codes.push_back(a);
        code_to_category.push_back(intern_category(b));
      } else if (directive == "#category") {
        if (in_body) throw fail(line_no, "#category declaration after patient records");
        if (a.empty() || !b.empty()) throw fail(line_no, "expected '#category <category>'");
        if (category_index.contains(a)) throw fail(line_no, "duplicate category '" + a + "'");
        intern_category(a);
      }
      continue;
    }
    in_body = true;
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) throw fail(line_no, "expected '<patient_id><TAB><visits>'");
    const std::string id(trim(line.substr(0, tab)));
    if (id.empty()) throw fail(line_no, "empty patient id");
    if (!seen_ids.insert(id).second) throw fail(line_no, "duplicate patient id '" + id + "'");
    PatientRecord record{id, {}};
    for (std::string_view visit_text : split_on(line.substr(tab + 1), ';')) {
      std::vector<std::uint32_t> visit_codes;
      for (std::string_view code_text : split_on(visit_text, ',')) {
        code_text = trim(code_text);
        if (code_text.empty()) {
          throw fail(line_no, "patient " + id + " visit " + std::to_string(record.visits.size() + 1) +
                                  ": empty code");
        }
        auto it = code_index.find(std::string(code_text));
        if (it == code_index.end()) {
          throw fail(line_no, "unknown code '" + std::string(code_text) + "' in patient " + id);
        }
        visit_codes.push_back(it->second);
      }
      const std::size_t raw_count = visit_codes.size();
      Visit visit(std::move(visit_codes));
      summary.duplicate_codes_dropped += raw_count - visit.size();
      record.visits.push_back(std::move(visit));
    }
    if (record.visits.size() < options.min_visits) {
      ++summary.patients_rejected;
      summary.rejected_ids.push_back(id);
      continue;
    }
    patients.push_back(std::move(record));
  }
  summary.patients_loaded = patients.size();
  Vocabulary vocabulary(std::move(codes), std::move(categories), std::move(code_to_category));
  return {CodedSequenceDataset(std::move(vocabulary), std::move(patients)), summary};
}

LoadedCorpus load_corpus(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file " + path.string());
  return read_corpus(in, options, path.string());
}

void write_corpus(std::ostream& out, const CodedSequenceDataset& dataset) {
  const Vocabulary& vocab = dataset.vocabulary();
  for (const std::string& category : vocab.categories()) out << "#category " << category << '\n';
  for (std::size_t c = 0; c < vocab.n_codes(); ++c) {
    out << "#code " << vocab.code(c) << ' ' << vocab.category(vocab.category_of(c)) << '\n';
  }
  for (const PatientRecord& p : dataset.patients()) {
    out << p.id << '\t';
    for (std::size_t v = 0; v < p.visits.size(); ++v) {
      if (v) out << ';';
      const auto& codes = p.visits[v].codes();
      for (std::size_t i = 0; i < codes.size(); ++i) {
        if (i) out << ',';
        out << vocab.code(codes[i]);
      }
    }
    out << '\n';
  }
}

void save_corpus(const CodedSequenceDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write corpus file " + path.string());
  write_corpus(out, dataset);
  if (!out) throw DataError("write failed for corpus file " + path.string());
}

}  // namespace dipole
