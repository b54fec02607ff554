#include "dipole/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "dipole/error.hpp"
#include "dipole/rng.hpp"

namespace dipole {

namespace {

void validate_range(const CountRange& r, const char* what) {
  if (r.min > r.max) throw ConfigError(std::string(what) + ": min exceeds max");
  if (r.mean < static_cast<double>(r.min) || r.mean > static_cast<double>(r.max)) {
    throw ConfigError(std::string(what) + ": mean must lie in [min, max]");
  }
}

// pmf over [min, max] with log-weight `log_weight(k)`, normalized stably.
template <typename Fn>
std::vector<double> normalized(const CountRange& r, Fn log_weight) {
  std::vector<double> logs;
  for (std::size_t k = r.min; k <= r.max; ++k) logs.push_back(log_weight(static_cast<double>(k)));
  const double mx = *std::max_element(logs.begin(), logs.end());
  std::vector<double> pmf(logs.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logs.size(); ++i) z += pmf[i] = std::exp(logs[i] - mx);
  for (double& p : pmf) p /= z;
  return pmf;
}

double pmf_mean(const CountRange& r, const std::vector<double>& pmf) {
  double m = 0.0;
  for (std::size_t i = 0; i < pmf.size(); ++i) m += pmf[i] * static_cast<double>(r.min + i);
  return m;
}

// Bisects a monotone one-parameter family until its mean matches r.mean.
template <typename Family>
std::vector<double> fit_mean(const CountRange& r, Family family, double lo, double hi) {
  std::vector<double> point(r.max - r.min + 1, 0.0);
  if (r.mean <= static_cast<double>(r.min)) {
    point.front() = 1.0;
    return point;
  }
  if (r.mean >= static_cast<double>(r.max)) {
    point.back() = 1.0;
    return point;
  }
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (pmf_mean(r, family(mid)) < r.mean) lo = mid;
    else hi = mid;
  }
  return family(0.5 * (lo + hi));
}

std::size_t sample_cdf(const std::vector<double>& cdf, Rng& rng) {
  const double u = rng.uniform() * cdf.back();
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

std::vector<double> cumulative(const std::vector<double>& weights) {
  std::vector<double> cdf(weights.size());
  std::partial_sum(weights.begin(), weights.end(), cdf.begin());
  return cdf;
}

std::string numbered(char prefix, std::size_t index, std::size_t total) {
  int width = 1;
  for (std::size_t t = total > 0 ? total - 1 : 0; t >= 10; t /= 10) ++width;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%0*zu", prefix, width, index);
  return buf;
}

struct RuleLayout {
  std::size_t block = 1;
  std::size_t used_categories = 0;
};

RuleLayout layout_for(const GeneratorConfig& c) {
  RuleLayout l;
  l.block = (c.vocab_size + c.n_categories - 1) / c.n_categories;
  l.used_categories = (c.vocab_size + l.block - 1) / l.block;
  return l;
}

std::vector<PlantedRule> plan_rules(const GeneratorConfig& c) {
  const RuleLayout l = layout_for(c);
  std::vector<PlantedRule> rules;
  if (c.n_rules == 0) return rules;
  if (c.n_rules >= l.used_categories) {
    throw ConfigError("generator: n_rules must be smaller than the number of populated categories (" +
                      std::to_string(l.used_categories) + ")");
  }
  // Triggers come from the upper-middle of the frequency ranking; consequents
  // are the rarest populated categories, so their base rate stays low.
  const std::size_t trigger_limit = (l.used_categories - c.n_rules) * l.block;
  const std::size_t lo = std::max<std::size_t>(1, c.vocab_size / 20);
  const std::size_t hi = std::max(lo + c.n_rules, c.vocab_size / 5);
  for (std::size_t i = 0; i < c.n_rules; ++i) {
    const std::size_t trigger = lo + i * (hi - lo) / c.n_rules;
    if (trigger >= trigger_limit) {
      throw ConfigError("generator: vocabulary too small to place " + std::to_string(c.n_rules) +
                        " trigger codes outside the consequent categories");
    }
    rules.push_back({static_cast<std::uint32_t>(trigger),
                     static_cast<std::uint32_t>(l.used_categories - 1 - i), c.dependency_lag});
  }
  return rules;
}

}  // namespace

void GeneratorConfig::validate() const {
  if (n_patients == 0) throw ConfigError("generator: n_patients must be positive");
  if (vocab_size == 0 || n_categories == 0) throw ConfigError("generator: empty vocabulary");
  if (n_categories > vocab_size) throw ConfigError("generator: n_categories exceeds vocab_size");
  validate_range(visits, "generator visits");
  validate_range(codes_per_visit, "generator codes_per_visit");
  if (visits.min < 2) throw ConfigError("generator visits: min must be at least 2");
  if (codes_per_visit.min < 1) throw ConfigError("generator codes_per_visit: min must be at least 1");
  if (codes_per_visit.max > vocab_size) {
    throw ConfigError("generator: codes_per_visit.max (" + std::to_string(codes_per_visit.max) +
                      ") exceeds vocab_size (" + std::to_string(vocab_size) + ")");
  }
  if (dependency_lag < 1) throw ConfigError("generator: dependency_lag must be at least 1");
  if (!(dependency_strength >= 0.0 && dependency_strength <= 1.0)) {
    throw ConfigError("generator: dependency_strength must lie in [0, 1]");
  }
  plan_rules(*this);
}

std::vector<double> truncated_geometric_pmf(const CountRange& range) {
  validate_range(range, "truncated geometric");
  const double base = static_cast<double>(range.min);
  return fit_mean(
      range, [&](double beta) { return normalized(range, [&](double k) { return beta * (k - base); }); },
      -50.0, 50.0);
}

std::vector<double> truncated_poisson_pmf(const CountRange& range) {
  validate_range(range, "truncated poisson");
  return fit_mean(
      range,
      [&](double log_lambda) {
        return normalized(range, [&](double k) { return k * log_lambda - std::lgamma(k + 1.0); });
      },
      -30.0, 30.0);
}

GeneratedCorpus generate(const GeneratorConfig& config) {
  config.validate();
  const RuleLayout layout = layout_for(config);
  std::vector<PlantedRule> rules = plan_rules(config);

  std::vector<std::string> codes, categories;
  std::vector<std::uint32_t> code_to_category;
  for (std::size_t g = 0; g < config.n_categories; ++g) categories.push_back(numbered('G', g, config.n_categories));
  for (std::size_t c = 0; c < config.vocab_size; ++c) {
    codes.push_back(numbered('C', c, config.vocab_size));
    code_to_category.push_back(static_cast<std::uint32_t>(c / layout.block));
  }

  std::vector<double> zipf(config.vocab_size);
  for (std::size_t k = 0; k < zipf.size(); ++k) zipf[k] = 1.0 / static_cast<double>(k + 1);
  const std::vector<double> code_cdf = cumulative(zipf);
  const std::vector<double> visit_cdf = cumulative(truncated_geometric_pmf(config.visits));
  const std::vector<double> size_cdf = cumulative(truncated_poisson_pmf(config.codes_per_visit));

  std::vector<std::int32_t> rule_of_code(config.vocab_size, -1);
  for (std::size_t r = 0; r < rules.size(); ++r) rule_of_code[rules[r].trigger_code] = static_cast<std::int32_t>(r);

  Rng rng(config.seed);
  GeneratedCorpus out;
  std::vector<PatientRecord> patients;
  patients.reserve(config.n_patients);
  for (std::size_t n = 0; n < config.n_patients; ++n) {
    const std::size_t T = config.visits.min + sample_cdf(visit_cdf, rng);
    std::vector<std::vector<std::uint32_t>> forced(T);
    PatientRecord record{numbered('P', n, config.n_patients), {}};
    record.visits.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t k = config.codes_per_visit.min + sample_cdf(size_cdf, rng);
      std::vector<std::uint32_t> visit;
      while (visit.size() < k) {
        const auto code = static_cast<std::uint32_t>(sample_cdf(code_cdf, rng));
        if (std::find(visit.begin(), visit.end(), code) == visit.end()) visit.push_back(code);
      }
      for (std::uint32_t g : forced[t]) {
        const bool present = std::any_of(visit.begin(), visit.end(),
                                         [&](std::uint32_t c) { return code_to_category[c] == g; });
        if (present) continue;
        const std::size_t first = g * layout.block;
        const std::size_t last = std::min(config.vocab_size, first + layout.block);
        visit.push_back(static_cast<std::uint32_t>(first + rng.index(last - first)));
      }
      std::sort(visit.begin(), visit.end());
      for (std::uint32_t c : visit) {
        const std::int32_t r = rule_of_code[c];
        if (r < 0 || t + rules[r].lag >= T) continue;
        ++out.trigger_occurrences;
        if (rng.bernoulli(config.dependency_strength)) {
          ++out.triggers_fired;
          forced[t + rules[r].lag].push_back(rules[r].consequent_category);
        }
      }
      record.visits.emplace_back(std::move(visit));
    }
    patients.push_back(std::move(record));
  }
  out.dataset = CodedSequenceDataset(
      Vocabulary(std::move(codes), std::move(categories), std::move(code_to_category)), std::move(patients));
  out.rules = std::move(rules);
  return out;
}

CorpusStats summarize(const CodedSequenceDataset& dataset) {
  CorpusStats s;
  const Vocabulary& vocab = dataset.vocabulary();
  s.patients = dataset.size();
  s.categories = vocab.n_categories();
  s.category_counts.assign(vocab.n_categories(), 0);
  std::vector<bool> code_seen(vocab.n_codes(), false);
  std::vector<bool> cat_in_visit(vocab.n_categories(), false);
  std::size_t code_total = 0, category_total = 0;
  for (const PatientRecord& p : dataset.patients()) {
    s.visits += p.visits.size();
    for (const Visit& v : p.visits) {
      code_total += v.size();
      s.max_codes_per_visit = std::max(s.max_codes_per_visit, v.size());
      std::fill(cat_in_visit.begin(), cat_in_visit.end(), false);
      std::size_t distinct = 0;
      for (std::uint32_t c : v.codes()) {
        code_seen[c] = true;
        const std::uint32_t g = vocab.category_of(c);
        if (!cat_in_visit[g]) {
          cat_in_visit[g] = true;
          ++distinct;
          ++s.category_counts[g];
        }
      }
      category_total += distinct;
      s.max_categories_per_visit = std::max(s.max_categories_per_visit, distinct);
    }
  }
  s.unique_codes = static_cast<std::size_t>(std::count(code_seen.begin(), code_seen.end(), true));
  if (s.patients) s.avg_visits_per_patient = static_cast<double>(s.visits) / s.patients;
  if (s.visits) {
    s.avg_codes_per_visit = static_cast<double>(code_total) / s.visits;
    s.avg_categories_per_visit = static_cast<double>(category_total) / s.visits;
  }
  return s;
}

std::string format_stats(const CorpusStats& s) {
  std::ostringstream out;
  char buf[128];
  auto row = [&](const char* label, const std::string& value) {
    std::snprintf(buf, sizeof buf, "%-36s %s\n", label, value.c_str());
    out << buf;
  };
  auto real = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.2f", v);
    return std::string(b);
  };
  row("# of patients", std::to_string(s.patients));
  row("# of visits", std::to_string(s.visits));
  row("Avg. # of visits per patient", real(s.avg_visits_per_patient));
  row("# of unique medical codes", std::to_string(s.unique_codes));
  row("Avg. # of medical codes per visit", real(s.avg_codes_per_visit));
  row("Max # of medical codes per visit", std::to_string(s.max_codes_per_visit));
  row("# of category codes", std::to_string(s.categories));
  row("Avg. # of category codes per visit", real(s.avg_categories_per_visit));
  row("Max # of category codes per visit", std::to_string(s.max_categories_per_visit));
  return out.str();
}

nlohmann::json to_json(const GeneratorConfig& c) {
  auto range = [](const CountRange& r) {
    return nlohmann::json{{"min", r.min}, {"max", r.max}, {"mean", r.mean}};
  };
  return {{"n_patients", c.n_patients},
          {"vocab_size", c.vocab_size},
          {"n_categories", c.n_categories},
          {"visits", range(c.visits)},
          {"codes_per_visit", range(c.codes_per_visit)},
          {"n_rules", c.n_rules},
          {"dependency_lag", c.dependency_lag},
          {"dependency_strength", c.dependency_strength},
          {"seed", c.seed}};
}

GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  auto range = [](const nlohmann::json& r) {
    return CountRange{r.at("min").get<std::size_t>(), r.at("max").get<std::size_t>(),
                      r.at("mean").get<double>()};
  };
  GeneratorConfig c;
  c.n_patients = j.at("n_patients").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.n_categories = j.at("n_categories").get<std::size_t>();
  c.visits = range(j.at("visits"));
  c.codes_per_visit = range(j.at("codes_per_visit"));
  c.n_rules = j.at("n_rules").get<std::size_t>();
  c.dependency_lag = j.at("dependency_lag").get<std::size_t>();
  c.dependency_strength = j.at("dependency_strength").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

void save_rules_sidecar(const GeneratedCorpus& corpus, const GeneratorConfig& config,
                        const std::filesystem::path& path) {
  const Vocabulary& vocab = corpus.dataset.vocabulary();
  nlohmann::json rules = nlohmann::json::array();
  for (const PlantedRule& r : corpus.rules) {
    rules.push_back({{"trigger_code", vocab.code(r.trigger_code)},
                     {"consequent_category", vocab.category(r.consequent_category)},
                     {"lag", r.lag}});
  }
  nlohmann::json doc{{"generator", to_json(config)},
                     {"rules", rules},
                     {"trigger_occurrences", corpus.trigger_occurrences},
                     {"triggers_fired", corpus.triggers_fired},
                     {"realized_trigger_rate", corpus.realized_trigger_rate()}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write rules sidecar " + path.string());
  out << doc.dump(2) << '\n';
}

std::vector<PlantedRule> load_rules_sidecar(const std::filesystem::path& path,
                                            const Vocabulary& vocabulary) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open rules sidecar " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  std::vector<PlantedRule> rules;
  for (const auto& r : doc.at("rules")) {
    const auto code = vocabulary.find_code(r.at("trigger_code").get<std::string>());
    const auto category = vocabulary.find_category(r.at("consequent_category").get<std::string>());
    if (!code || !category) throw DataError(path.string() + ": rule references unknown code or category");
    rules.push_back({*code, *category, r.at("lag").get<std::size_t>()});
  }
  return rules;
}

}  // namespace dipole
