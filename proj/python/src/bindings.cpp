#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "dipole/cli.hpp"
#include "dipole/dipole.hpp"

namespace py = pybind11;
using namespace dipole;

namespace {

py::dict to_dict(const PredictionRecord& r) {
  py::dict d;
  d["patient_id"] = r.patient_id;
  d["step"] = r.step;
  d["patient_visits"] = r.patient_visits;
  d["scores"] = r.scores;
  d["truth"] = std::vector<int>(r.truth.begin(), r.truth.end());
  d["attention"] = r.attention;
  return d;
}

py::dict to_dict(const EvalReport& r) {
  py::dict d;
  d["n_predictions"] = r.n_predictions;
  d["correct_count"] = r.correct_count;
  d["accuracy"] = r.accuracy;
  py::dict at;
  for (const auto& [k, v] : r.accuracy_at) at[py::int_(k)] = v;
  d["accuracy_at"] = at;
  py::list groups;
  for (const GroupRow& g : r.groups) {
    py::dict row;
    row["group"] = g.group;
    row["patients"] = g.patients;
    row["predictions"] = g.predictions;
    row["weighted_accuracy"] = g.weighted_accuracy;
    groups.append(row);
  }
  d["groups"] = groups;
  return d;
}

std::vector<PredictionRecord> predict_all(const Model& model, const CodedSequenceDataset& dataset,
                                          std::size_t workers) {
  py::gil_scoped_release release;
  return predict_dataset(model, dataset, workers);
}

}  // namespace

PYBIND11_MODULE(_dipole, m) {
  m.doc() = "Attention-based bidirectional GRU models for next-visit diagnosis prediction";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<UnsupportedVariant>(m, "UnsupportedVariant", PyExc_ValueError);
  py::register_exception<TrainingDiverged>(m, "TrainingDiverged", PyExc_RuntimeError);

  m.attr("VARIANTS") = [] {
    std::vector<std::string> names;
    for (Variant v : kAllVariants) names.push_back(to_string(v));
    return names;
  }();

  py::class_<CodedSequenceDataset>(m, "Dataset")
      .def("__len__", &CodedSequenceDataset::size)
      .def_property_readonly("n_codes", [](const CodedSequenceDataset& d) { return d.vocabulary().n_codes(); })
      .def_property_readonly("n_categories",
                             [](const CodedSequenceDataset& d) { return d.vocabulary().n_categories(); })
      .def_property_readonly("patient_ids",
                             [](const CodedSequenceDataset& d) {
                               std::vector<std::string> ids;
                               for (const PatientRecord& p : d.patients()) ids.push_back(p.id);
                               return ids;
                             })
      .def(
          "visits",
          [](const CodedSequenceDataset& d, std::size_t i) {
            if (i >= d.size()) throw py::index_error("patient index out of range");
            std::vector<std::vector<std::string>> out;
            for (const Visit& v : d.patients()[i].visits) {
              std::vector<std::string> codes;
              for (std::uint32_t c : v.codes()) codes.push_back(d.vocabulary().code(c));
              out.push_back(std::move(codes));
            }
            return out;
          },
          py::arg("index"), "Codes of each visit of patient `index`.")
      .def("stats", [](const CodedSequenceDataset& d) { return format_stats(summarize(d)); })
      .def("save", [](const CodedSequenceDataset& d, const std::filesystem::path& path) { save_corpus(d, path); });

  m.def(
      "load_corpus",
      [](const std::filesystem::path& path, std::size_t min_visits) {
        return load_corpus(path, LoadOptions{min_visits}).dataset;
      },
      py::arg("path"), py::arg("min_visits") = 2);

  m.def(
      "generate",
      [](std::size_t patients, std::size_t codes, std::size_t categories, std::size_t min_visits,
         std::size_t max_visits, double mean_visits, std::size_t min_codes, std::size_t max_codes,
         double mean_codes, std::size_t rules, std::size_t lag, double strength, std::uint64_t seed) {
        GeneratorConfig g;
        g.n_patients = patients;
        g.vocab_size = codes;
        g.n_categories = categories;
        g.visits = {min_visits, max_visits, mean_visits};
        g.codes_per_visit = {min_codes, max_codes, mean_codes};
        g.n_rules = rules;
        g.dependency_lag = lag;
        g.dependency_strength = strength;
        g.seed = seed;
        return generate(g).dataset;
      },
      py::kw_only(), py::arg("patients") = 1000, py::arg("codes") = 200, py::arg("categories") = 40,
      py::arg("min_visits") = 5, py::arg("max_visits") = 60, py::arg("mean_visits") = 20.0,
      py::arg("min_codes") = 1, py::arg("max_codes") = 30, py::arg("mean_codes") = 6.0, py::arg("rules") = 8,
      py::arg("lag") = 5, py::arg("strength") = 0.8, py::arg("seed") = 0,
      "Synthetic corpus with planted trigger -> consequent rules.");

  m.def(
      "split",
      [](const CodedSequenceDataset& d, double validation, double test, std::uint64_t seed) {
        DatasetSplit s = split(d, SplitFractions{1.0 - validation - test, validation, test, seed});
        return py::make_tuple(std::move(s.train), std::move(s.validation), std::move(s.test));
      },
      py::arg("dataset"), py::arg("validation") = 0.10, py::arg("test") = 0.15, py::arg("seed") = 0);

  py::class_<Model>(m, "Model")
      .def(py::init([](const std::string& variant, std::size_t n_codes, std::size_t n_categories, std::size_t m_,
                       std::size_t p, std::size_t q, std::size_t r, double dropout, double l2,
                       const std::string& brnn_mode, std::uint64_t seed) {
             ModelConfig c;
             c.variant = parse_variant(variant);
             c.n_codes = n_codes;
             c.n_categories = n_categories;
             c.embed_dim = m_;
             c.hidden_dim = p;
             c.attention_dim = q;
             c.output_dim = r;
             c.dropout_rate = dropout;
             c.l2_coefficient = l2;
             c.causality = parse_causality(brnn_mode);
             return Model(c, seed);
           }),
           py::arg("variant"), py::arg("n_codes"), py::arg("n_categories"), py::kw_only(), py::arg("m") = 64,
           py::arg("p") = 64, py::arg("q") = 32, py::arg("r") = 0, py::arg("dropout") = 0.5, py::arg("l2") = 0.001,
           py::arg("brnn_mode") = "prefix", py::arg("seed") = 0)
      .def_static("load", [](const std::filesystem::path& prefix) { return load_model(prefix).model; })
      .def(
          "save", [](const Model& model, const std::filesystem::path& prefix) { save_model(model, prefix); },
          py::arg("prefix"))
      .def_property_readonly("variant", [](const Model& model) { return to_string(model.config().variant); })
      .def_property_readonly("parameter_names",
                             [](const Model& model) {
                               std::vector<std::string> names;
                               for (ParamId i = 0; i < model.params().size(); ++i) names.push_back(model.params().name(i));
                               return names;
                             })
      .def(
          "predict",
          [](const Model& model, const CodedSequenceDataset& d, std::size_t workers) {
            py::list out;
            for (const PredictionRecord& r : predict_all(model, d, workers)) out.append(to_dict(r));
            return out;
          },
          py::arg("dataset"), py::arg("workers") = 1)
      .def(
          "evaluate",
          [](const Model& model, const CodedSequenceDataset& d, std::size_t group_divisor, std::size_t workers) {
            const auto records = predict_all(model, d, workers);
            return to_dict(evaluate(records, group_divisor));
          },
          py::arg("dataset"), py::arg("group_divisor") = 10, py::arg("workers") = 1)
      .def(
          "attention",
          [](const Model& model, const CodedSequenceDataset& d, std::size_t index, std::size_t step) {
            if (index >= d.size()) throw py::index_error("patient index out of range");
            return extract_attention(model, d.patients()[index], d.vocabulary(), step).weights;
          },
          py::arg("dataset"), py::arg("index"), py::arg("step"))
      .def(
          "top_codes",
          [](const Model& model, const CodedSequenceDataset& d, std::size_t dimension, std::size_t k) {
            const DimensionReport r =
                interpret_dimension(model.params().value(model.params().id("embed.W_v")), dimension, k);
            std::vector<std::pair<std::string, double>> out;
            for (const DimensionEntry& e : r.entries) out.emplace_back(d.vocabulary().code(e.code), e.value);
            return out;
          },
          py::arg("dataset"), py::arg("dimension"), py::arg("k") = 10);

  m.def(
      "train",
      [](Model& model, const CodedSequenceDataset& train_set, const CodedSequenceDataset& validation,
         std::size_t epochs, std::size_t batch_size, std::uint64_t seed, std::size_t workers, double rho, double eps) {
        TrainConfig t;
        t.epochs = epochs;
        t.batch_size = batch_size;
        t.seed = seed;
        t.workers = workers;
        t.rho = rho;
        t.eps = eps;
        TrainResult result;
        {
          py::gil_scoped_release release;
          result = train(model, train_set, validation, t);
        }
        py::list history;
        for (const EpochLog& e : result.history) {
          py::dict row;
          row["epoch"] = e.epoch;
          row["train_loss"] = e.train_loss;
          row["val_accuracy"] = e.val_accuracy;
          row["seconds"] = e.seconds;
          history.append(row);
        }
        py::dict out;
        out["best_epoch"] = result.best_epoch;
        out["history"] = history;
        return out;
      },
      py::arg("model"), py::arg("train"), py::arg("validation"), py::kw_only(), py::arg("epochs") = 10,
      py::arg("batch_size") = 100, py::arg("seed") = 0, py::arg("workers") = 1, py::arg("rho") = 0.95,
      py::arg("eps") = 1e-6, "Adadelta training; the model keeps the best epoch's parameters.");

  m.def(
      "gradcheck",
      [](const std::string& variant, const std::string& brnn_mode, std::uint64_t seed) {
        const GradCheckReport r = check_model_gradients(parse_variant(variant), parse_causality(brnn_mode), seed);
        return py::make_tuple(r.passed, r.max_relative_error());
      },
      py::arg("variant"), py::arg("brnn_mode") = "prefix", py::arg("seed") = 0,
      "Finite-difference check on a tiny model; returns (passed, max relative error).");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the dipole command line in-process; returns (exit code, stdout, stderr).");
}
