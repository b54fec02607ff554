#include "dipole/cli.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <type_traits>

#include <CLI11.hpp>
#include <json.hpp>

#include "dipole/diagnostics.hpp"
#include "dipole/ehr_data.hpp"
#include "dipole/error.hpp"
#include "dipole/interpret.hpp"
#include "dipole/metrics.hpp"
#include "dipole/model.hpp"
#include "dipole/persist.hpp"
#include "dipole/run_config.hpp"
#include "dipole/synth.hpp"
#include "dipole/train.hpp"

namespace dipole {

namespace {

using StringList = std::vector<std::string>;

StringList split_list(const std::string& text) {
  StringList items;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto first = item.find_first_not_of(' ');
    if (first == std::string::npos) continue;
    items.push_back(item.substr(first, item.find_last_not_of(' ') - first + 1));
  }
  return items;
}

template <class T>
std::string render(const T& value) {
  if constexpr (std::is_same_v<T, std::string>) {
    return value;
  } else if constexpr (std::is_same_v<T, StringList>) {
    std::string joined;
    for (const std::string& s : value) joined += (joined.empty() ? "" : ",") + s;
    return joined;
  } else if constexpr (std::is_floating_point_v<T>) {
    // Shortest text that reads back to the same double.
    char buf[64];
    const auto result = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, result.ptr);
  } else {
    return std::to_string(value);
  }
}

template <class T>
void assign(const std::string& key, const std::string& text, T& value) {
  if constexpr (std::is_same_v<T, StringList>) {
    value = split_list(text);
  } else if (!CLI::detail::lexical_cast(text, value)) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  }
}

// Options of one subcommand that also live in its RunConfig. Values given on
// the command line win over the --config file; the merged result is what
// gets written next to the artifacts.
class Flags {
 public:
  Flags(CLI::App* app, std::string command) : app_(app), command_(std::move(command)) {
    app_->add_option("--config", config_path_, "key = value file; command-line flags override it");
  }

  template <class T>
  CLI::Option* add(const std::string& key, T& value, const std::string& help) {
    CLI::Option* option = app_->add_option("--" + key, value, help)->capture_default_str();
    entries_.push_back({key, option, [key, &value](const std::string& text) { assign(key, text, value); },
                        [&value] { return render(value); }});
    return option;
  }

  RunConfig resolve() {
    if (!config_path_.empty()) {
      const RunConfig file = RunConfig::load(config_path_);
      StringList keys;
      for (const Entry& e : entries_) keys.push_back(e.key);
      file.reject_unknown(keys, command_);
      for (const Entry& e : entries_) {
        if (e.option->count() != 0) continue;
        if (const auto text = file.get(e.key)) e.assign(*text);
      }
    }
    RunConfig merged;
    for (const Entry& e : entries_) merged.set(e.key, e.render());
    return merged;
  }

 private:
  struct Entry {
    std::string key;
    CLI::Option* option;
    std::function<void(const std::string&)> assign;
    std::function<std::string()> render;
  };

  CLI::App* app_;
  std::string command_;
  std::string config_path_;
  std::vector<Entry> entries_;
};

void require(const std::string& value, const std::string& command, const std::string& key) {
  if (value.empty()) throw ConfigError(command + ": --" + key + " is required");
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  return out;
}

// ---------------------------------------------------------------- synth

struct SynthCommand {
  GeneratorConfig generator;
  std::string out_path;

  void declare(Flags& f) {
    f.add("out", out_path, "corpus file to write; rules go to <out>.rules.json");
    f.add("seed", generator.seed, "generator seed");
    f.add("patients", generator.n_patients, "number of patients");
    f.add("codes", generator.vocab_size, "vocabulary size |C|");
    f.add("categories", generator.n_categories, "number of categories |G|");
    f.add("min-visits", generator.visits.min, "fewest visits per patient");
    f.add("max-visits", generator.visits.max, "most visits per patient");
    f.add("mean-visits", generator.visits.mean, "mean visits per patient");
    f.add("min-codes", generator.codes_per_visit.min, "fewest codes per visit");
    f.add("max-codes", generator.codes_per_visit.max, "most codes per visit");
    f.add("mean-codes", generator.codes_per_visit.mean, "mean codes per visit");
    f.add("rules", generator.n_rules, "number of planted rules");
    f.add("lag", generator.dependency_lag, "visits between trigger and consequent");
    f.add("strength", generator.dependency_strength, "probability a trigger fires");
  }

  int run(const RunConfig& config, std::ostream& out, std::ostream&) {
    require(out_path, "synth", "out");
    const GeneratedCorpus corpus = generate(generator);
    save_corpus(corpus.dataset, out_path);
    save_rules_sidecar(corpus, generator, out_path + ".rules.json");
    config.save(run_config_path(out_path));
    out << format_stats(summarize(corpus.dataset));
    out << "planted rules: " << corpus.rules.size() << ", trigger rate "
        << render(corpus.realized_trigger_rate()) << " (" << corpus.triggers_fired << "/"
        << corpus.trigger_occurrences << ")\n";
    return 0;
  }
};

// ---------------------------------------------------------------- train

struct TrainCommand {
  std::string corpus_path;
  std::string out_prefix;
  std::string variant = "dipole_c";
  std::string brnn_mode = "prefix";
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  double validation_fraction = 0.10;
  double test_fraction = 0.15;
  std::size_t min_visits = 2;
  ModelConfig model;
  TrainConfig training;

  void declare(Flags& f) {
    f.add("corpus", corpus_path, "input corpus");
    f.add("out", out_prefix, "checkpoint prefix (<out>.json, <out>.bin, <out>.log.tsv)");
    f.add("variant", variant, "rnn, rnn_l, rnn_g, rnn_c, dipole_plain, dipole_l, dipole_g, dipole_c");
    f.add("brnn-mode", brnn_mode, "backward RNN input: prefix or full")
        ->check(CLI::IsMember({"prefix", "full"}));
    f.add("seed", seed, "initialization and shuffling seed");
    f.add("split-seed", split_seed, "patient split seed");
    f.add("val-fraction", validation_fraction, "fraction of patients for validation");
    f.add("test-fraction", test_fraction, "fraction of patients for test");
    f.add("min-visits", min_visits, "drop patients with fewer visits");
    f.add("m", model.embed_dim, "visit embedding size");
    f.add("p", model.hidden_dim, "GRU hidden size");
    f.add("q", model.attention_dim, "concat attention size");
    f.add("r", model.output_dim, "attentional state size (0 means 2p)");
    f.add("dropout", model.dropout_rate, "dropout rate");
    f.add("l2", model.l2_coefficient, "L2 coefficient on weight matrices");
    f.add("epochs", training.epochs, "training epochs");
    f.add("batch-size", training.batch_size, "patients per batch");
    f.add("workers", training.workers, "gradient worker threads");
    f.add("rho", training.rho, "Adadelta decay");
    f.add("eps", training.eps, "Adadelta epsilon");
  }

  int run(const RunConfig& config, std::ostream& out, std::ostream& err) {
    require(corpus_path, "train", "corpus");
    require(out_prefix, "train", "out");
    model.variant = parse_variant(variant);
    model.causality = parse_causality(brnn_mode);
    training.seed = seed;
    training.validate();

    const LoadedCorpus loaded = load_corpus(corpus_path, LoadOptions{min_visits});
    if (loaded.summary.patients_rejected > 0) {
      err << "dipole train: skipped " << loaded.summary.patients_rejected << " patients with fewer than "
          << min_visits << " visits\n";
    }
    SplitFractions fractions{1.0 - validation_fraction - test_fraction, validation_fraction, test_fraction, split_seed};
    const DatasetSplit parts = split(loaded.dataset, fractions);

    model.n_codes = loaded.dataset.vocabulary().n_codes();
    model.n_categories = loaded.dataset.vocabulary().n_categories();
    Model net(model, seed);

    std::ofstream log = open_output(out_prefix + ".log.tsv");
    log << kEpochLogHeader << '\n';
    const TrainResult result = train(net, parts.train, parts.validation, training, [&](const EpochLog& e) {
      log << format_epoch_line(e) << '\n';
      log.flush();
      err << "epoch " << e.epoch << " loss " << e.train_loss << " val_accuracy " << e.val_accuracy << '\n';
    });

    nlohmann::json metadata{{"seed", seed},
                            {"split_seed", split_seed},
                            {"validation_fraction", validation_fraction},
                            {"test_fraction", test_fraction},
                            {"min_visits", min_visits},
                            {"epochs", training.epochs},
                            {"best_epoch", result.best_epoch}};
    save_model(net, out_prefix, metadata);
    config.save(run_config_path(out_prefix));
    out << "best epoch " << result.best_epoch << " of " << result.history.size() << ", validation accuracy "
        << render(result.history[result.best_epoch - 1].val_accuracy) << '\n';
    return 0;
  }
};

// ---------------------------------------------------------------- shared by eval / interpret

// The split stored in the checkpoint, unless `split_seed_text` overrides the seed.
CodedSequenceDataset select_part(const std::string& corpus_path, const nlohmann::json& metadata,
                                 const std::string& split_name, const std::string& split_seed_text,
                                 const ModelConfig& config) {
  const LoadOptions options{metadata.value("min_visits", std::size_t{2})};
  CodedSequenceDataset dataset = load_corpus(corpus_path, options).dataset;
  const Vocabulary& vocab = dataset.vocabulary();
  if (vocab.n_codes() != config.n_codes || vocab.n_categories() != config.n_categories) {
    throw DataError("corpus " + corpus_path + " has " + std::to_string(vocab.n_codes()) + " codes and " +
                    std::to_string(vocab.n_categories()) + " categories; the model expects " +
                    std::to_string(config.n_codes) + " and " + std::to_string(config.n_categories));
  }
  if (split_name == "all") return dataset;
  SplitFractions fractions;
  fractions.validation_fraction = metadata.value("validation_fraction", fractions.validation_fraction);
  fractions.test_fraction = metadata.value("test_fraction", fractions.test_fraction);
  fractions.train_fraction = 1.0 - fractions.validation_fraction - fractions.test_fraction;
  fractions.seed = metadata.value("split_seed", std::uint64_t{0});
  if (!split_seed_text.empty()) assign("split-seed", split_seed_text, fractions.seed);
  DatasetSplit parts = split(dataset, fractions);
  if (split_name == "train") return std::move(parts.train);
  if (split_name == "validation") return std::move(parts.validation);
  return std::move(parts.test);
}

const auto kSplitNames = CLI::IsMember({"train", "validation", "test", "all"});

// ---------------------------------------------------------------- eval

struct EvalCommand {
  StringList model_prefixes;
  std::string corpus_path;
  std::string split_name = "test";
  std::string split_seed_text;
  std::size_t group_divisor = 10;
  std::size_t workers = 1;
  std::string out_path;

  void declare(Flags& f) {
    f.add("model", model_prefixes, "checkpoint prefix; repeat for one table row per model");
    f.add("corpus", corpus_path, "corpus the models were trained on");
    f.add("split", split_name, "patients to evaluate: train, validation, test or all")->check(kSplitNames);
    f.add("split-seed", split_seed_text, "override the split seed stored in the checkpoint");
    f.add("group-divisor", group_divisor, "visit-count group width");
    f.add("workers", workers, "prediction worker threads");
    f.add("out", out_path, "also write the report to this file");
  }

  int run(const RunConfig& config, std::ostream& out, std::ostream&) {
    if (model_prefixes.empty()) throw ConfigError("eval: --model is required");
    require(corpus_path, "eval", "corpus");
    if (group_divisor == 0) throw ConfigError("eval: --group-divisor must be positive");
    std::vector<LabelledReport> rows;
    std::set<std::string> labels;
    for (const std::string& prefix : model_prefixes) {
      const LoadedModel loaded = load_model(prefix);
      const CodedSequenceDataset part =
          select_part(corpus_path, loaded.metadata, split_name, split_seed_text, loaded.model.config());
      const auto records = predict_dataset(loaded.model, part, workers);
      std::string label = to_string(loaded.model.config().variant);
      if (!labels.insert(label).second) label = prefix;
      labels.insert(label);
      rows.push_back({label, evaluate(records, group_divisor)});
    }
    const std::string report = format_reports(rows);
    out << report;
    if (!out_path.empty()) {
      std::ofstream file = open_output(out_path);
      file << report;
      config.save(run_config_path(out_path));
    }
    return 0;
  }
};

// ---------------------------------------------------------------- interpret

struct InterpretCommand {
  std::string model_prefix;
  std::string corpus_path;
  std::string split_name = "test";
  std::string split_seed_text;
  std::string traces_path;
  std::string dims_path;
  std::string dimensions = "all";
  std::size_t top_k = 10;

  void declare(Flags& f) {
    f.add("model", model_prefix, "checkpoint prefix");
    f.add("corpus", corpus_path, "corpus the model was trained on");
    f.add("split", split_name, "patients to trace: train, validation, test or all")->check(kSplitNames);
    f.add("split-seed", split_seed_text, "override the split seed stored in the checkpoint");
    f.add("traces", traces_path, "write attention traces (TSV) here");
    f.add("dims", dims_path, "write embedding dimension reports (TSV) here");
    f.add("dimensions", dimensions, "comma-separated embedding dimensions, or 'all'");
    f.add("top-k", top_k, "codes listed per dimension");
  }

  std::vector<std::size_t> selected_dimensions(std::size_t m) const {
    std::vector<std::size_t> dims;
    if (dimensions == "all") {
      for (std::size_t d = 0; d < m; ++d) dims.push_back(d);
      return dims;
    }
    for (const std::string& item : split_list(dimensions)) {
      std::size_t d = 0;
      assign("dimensions", item, d);
      if (d >= m) throw ConfigError("interpret: dimension " + item + " out of range [0, " + std::to_string(m) + ")");
      dims.push_back(d);
    }
    return dims;
  }

  int run(const RunConfig& config, std::ostream& out, std::ostream&) {
    require(model_prefix, "interpret", "model");
    if (traces_path.empty() && dims_path.empty()) throw ConfigError("interpret: give --traces and/or --dims");
    const LoadedModel loaded = load_model(model_prefix);
    const ModelConfig& mc = loaded.model.config();
    if (!traces_path.empty()) {
      require(corpus_path, "interpret", "corpus");
      const CodedSequenceDataset part =
          select_part(corpus_path, loaded.metadata, split_name, split_seed_text, mc);
      const std::size_t rows = export_traces(loaded.model, part, traces_path);
      config.save(run_config_path(traces_path));
      out << "wrote " << rows << " attention traces to " << traces_path << '\n';
    }
    if (!dims_path.empty()) {
      // Code identifiers come from the corpus when given; otherwise indices are printed.
      Vocabulary vocab;
      if (!corpus_path.empty()) {
        vocab = load_corpus(corpus_path).dataset.vocabulary();
      } else {
        std::vector<std::string> codes, categories{"_"};
        for (std::size_t i = 0; i < mc.n_codes; ++i) codes.push_back(std::to_string(i));
        vocab = Vocabulary(codes, categories, std::vector<std::uint32_t>(mc.n_codes, 0));
      }
      const ParamStore& params = loaded.model.params();
      const Tensor& w_v = params.value(params.id("embed.W_v"));
      std::vector<DimensionReport> reports;
      for (std::size_t d : selected_dimensions(mc.embed_dim)) reports.push_back(interpret_dimension(w_v, d, top_k));
      std::ofstream file = open_output(dims_path);
      write_dimension_reports(file, reports, vocab);
      config.save(run_config_path(dims_path));
      out << "wrote " << reports.size() << " dimension reports to " << dims_path << '\n';
    }
    return 0;
  }
};

// ---------------------------------------------------------------- gradcheck

struct GradCheckCommand {
  std::string variant = "all";
  std::string brnn_mode = "prefix";
  std::uint64_t seed = 0;
  double eps = 1e-5;
  double tolerance = 1e-4;

  void declare(Flags& f) {
    f.add("variant", variant, "one variant, or 'all'");
    f.add("brnn-mode", brnn_mode, "prefix, full or both")->check(CLI::IsMember({"prefix", "full", "both"}));
    f.add("seed", seed, "parameter and patient seed");
    f.add("eps", eps, "finite-difference step");
    f.add("tol", tolerance, "maximum relative error");
  }

  int run(const RunConfig&, std::ostream& out, std::ostream& err) {
    std::vector<Variant> variants;
    if (variant == "all") {
      variants.assign(kAllVariants.begin(), kAllVariants.end());
    } else {
      variants.push_back(parse_variant(variant));
    }
    std::vector<Causality> modes;
    if (brnn_mode != "full") modes.push_back(Causality::prefix);
    if (brnn_mode != "prefix") modes.push_back(Causality::full);

    std::size_t failures = 0;
    for (Variant v : variants) {
      for (Causality c : modes) {
        if (c == Causality::full && !is_bidirectional(v)) continue;
        const GradCheckReport report = check_model_gradients(v, c, seed, eps, tolerance);
        char line[160];
        std::snprintf(line, sizeof line, "%-13s %-7s max_rel_err %.3e  %s\n", to_string(v).c_str(),
                      to_string(c).c_str(), report.max_relative_error(), report.passed ? "PASS" : "FAIL");
        out << line;
        if (!report.passed) {
          ++failures;
          for (const GradCheckEntry& e : report.entries) {
            if (e.max_relative_error >= tolerance) {
              err << "  " << to_string(v) << ": " << e.name << " max relative error " << e.max_relative_error << '\n';
            }
          }
        }
      }
    }
    if (failures > 0) {
      err << "dipole gradcheck: " << failures << " configuration(s) exceeded tolerance " << tolerance << '\n';
      return 1;
    }
    return 0;
  }
};

template <class Command>
struct Subcommand {
  Command command;
  CLI::App* app;
  Flags flags;

  Subcommand(CLI::App& parent, const std::string& name, const std::string& description)
      : app(parent.add_subcommand(name, description)), flags(app, name) {
    command.declare(flags);
  }

  int run(std::ostream& out, std::ostream& err) { return command.run(flags.resolve(), out, err); }
};

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attention-based bidirectional GRU models for next-visit diagnosis prediction", "dipole"};
  app.require_subcommand(1);
  Subcommand<SynthCommand> synth(app, "synth", "generate a synthetic corpus with planted rules");
  Subcommand<TrainCommand> train_cmd(app, "train", "train a model and write a checkpoint");
  Subcommand<EvalCommand> eval(app, "eval", "score checkpoints on a corpus split");
  Subcommand<InterpretCommand> interpret(app, "interpret", "export attention traces and embedding dimensions");
  Subcommand<GradCheckCommand> gradcheck(app, "gradcheck", "finite-difference check of every variant");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  try {
    if (synth.app->parsed()) return synth.run(out, err);
    if (train_cmd.app->parsed()) return train_cmd.run(out, err);
    if (eval.app->parsed()) return eval.run(out, err);
    if (interpret.app->parsed()) return interpret.run(out, err);
    if (gradcheck.app->parsed()) return gradcheck.run(out, err);
  } catch (const std::exception& e) {
    err << "dipole: error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"dipole"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace dipole
