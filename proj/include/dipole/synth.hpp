#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dipole/ehr_data.hpp"

namespace dipole {

// Integer count distribution over [min, max] with the given mean.
struct CountRange {
  std::size_t min = 1;
  std::size_t max = 1;
  double mean = 1.0;
};

// Defaults follow the Diabetes-claims shape: 7,399 codes in 422
// categories, 20.45 visits per patient (at least 5), 6.35 codes per visit
// (at most 105).
struct GeneratorConfig {
  std::size_t n_patients = 22820;
  std::size_t vocab_size = 7399;
  std::size_t n_categories = 422;
  CountRange visits{5, 104, 20.45};
  CountRange codes_per_visit{1, 105, 6.35};
  std::size_t n_rules = 8;
  std::size_t dependency_lag = 5;
  double dependency_strength = 0.8;
  std::uint64_t seed = 0;

  void validate() const;
};

// A trigger code at visit t forces a code of `consequent_category` into
// visit t + lag.
struct PlantedRule {
  std::uint32_t trigger_code = 0;
  std::uint32_t consequent_category = 0;
  std::size_t lag = 1;

  bool operator==(const PlantedRule&) const = default;
};

struct GeneratedCorpus {
  CodedSequenceDataset dataset;
  std::vector<PlantedRule> rules;
  // Trigger occurrences with a visit `lag` steps later, and how many of
  // them fired.
  std::size_t trigger_occurrences = 0;
  std::size_t triggers_fired = 0;

  double realized_trigger_rate() const {
    return trigger_occurrences ? static_cast<double>(triggers_fired) / trigger_occurrences : 0.0;
  }
};

// Truncated geometric pmf over [min, max] whose mean matches range.mean.
std::vector<double> truncated_geometric_pmf(const CountRange& range);
// Truncated Poisson pmf over [min, max] whose mean matches range.mean.
std::vector<double> truncated_poisson_pmf(const CountRange& range);

GeneratedCorpus generate(const GeneratorConfig& config);

struct CorpusStats {
  std::size_t patients = 0;
  std::size_t visits = 0;
  double avg_visits_per_patient = 0.0;
  std::size_t unique_codes = 0;
  double avg_codes_per_visit = 0.0;
  std::size_t max_codes_per_visit = 0;
  std::size_t categories = 0;
  double avg_categories_per_visit = 0.0;
  std::size_t max_categories_per_visit = 0;
  // Number of visits in which each category appears.
  std::vector<std::size_t> category_counts;
};

CorpusStats summarize(const CodedSequenceDataset& dataset);
std::string format_stats(const CorpusStats& stats);

nlohmann::json to_json(const GeneratorConfig& config);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);

// Sidecar listing the planted rules (by code and category identifier) and
// the generator config.
void save_rules_sidecar(const GeneratedCorpus& corpus, const GeneratorConfig& config,
                        const std::filesystem::path& path);
std::vector<PlantedRule> load_rules_sidecar(const std::filesystem::path& path,
                                            const Vocabulary& vocabulary);

}  // namespace dipole
