#include "dipole/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dipole/error.hpp"
#include "dipole/ops.hpp"

namespace dipole {

std::string to_string(Variant variant) {
  switch (variant) {
    case Variant::rnn: return "rnn";
    case Variant::rnn_l: return "rnn_l";
    case Variant::rnn_g: return "rnn_g";
    case Variant::rnn_c: return "rnn_c";
    case Variant::dipole_plain: return "dipole_plain";
    case Variant::dipole_l: return "dipole_l";
    case Variant::dipole_g: return "dipole_g";
    case Variant::dipole_c: return "dipole_c";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (to_string(v) == name) return v;
  }
  if (name == "dipole-" || name == "dipole_minus") return Variant::dipole_plain;
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected rnn, rnn_l, rnn_g, rnn_c, dipole_plain, dipole_l, dipole_g or dipole_c)");
}

bool is_bidirectional(Variant variant) {
  return variant == Variant::dipole_plain || variant == Variant::dipole_l ||
         variant == Variant::dipole_g || variant == Variant::dipole_c;
}

std::optional<AttentionKind> attention_kind(Variant variant) {
  switch (variant) {
    case Variant::rnn_l:
    case Variant::dipole_l: return AttentionKind::location;
    case Variant::rnn_g:
    case Variant::dipole_g: return AttentionKind::general;
    case Variant::rnn_c:
    case Variant::dipole_c: return AttentionKind::concat;
    default: return std::nullopt;
  }
}

std::string to_string(Causality mode) { return mode == Causality::prefix ? "prefix" : "full"; }

Causality parse_causality(std::string_view name) {
  if (name == "prefix") return Causality::prefix;
  if (name == "full") return Causality::full;
  throw ConfigError("unknown brnn mode '" + std::string(name) + "' (expected prefix or full)");
}

std::size_t ModelConfig::encoder_width() const {
  return is_bidirectional(variant) ? 2 * hidden_dim : hidden_dim;
}

void ModelConfig::validate() const {
  if (embed_dim == 0 || hidden_dim == 0) throw ConfigError("model: m and p must be positive");
  if (attention_kind(variant) == AttentionKind::concat && attention_dim == 0) {
    throw ConfigError("model: concat attention needs q > 0");
  }
  if (n_codes == 0 || n_categories == 0) throw ConfigError("model: vocabulary sizes must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("model: dropout rate must be in [0, 1)");
  if (!(l2_coefficient >= 0.0)) throw ConfigError("model: l2 coefficient must be non-negative");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"variant", to_string(c.variant)},
          {"m", c.embed_dim},
          {"p", c.hidden_dim},
          {"q", c.attention_dim},
          {"r", c.resolved_output_dim()},
          {"n_codes", c.n_codes},
          {"n_categories", c.n_categories},
          {"dropout_rate", c.dropout_rate},
          {"l2_coefficient", c.l2_coefficient},
          {"brnn_mode", to_string(c.causality)}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.embed_dim = j.at("m").get<std::size_t>();
  c.hidden_dim = j.at("p").get<std::size_t>();
  c.attention_dim = j.at("q").get<std::size_t>();
  c.output_dim = j.at("r").get<std::size_t>();
  c.n_codes = j.at("n_codes").get<std::size_t>();
  c.n_categories = j.at("n_categories").get<std::size_t>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.l2_coefficient = j.at("l2_coefficient").get<double>();
  c.causality = parse_causality(j.at("brnn_mode").get<std::string>());
  return c;
}

struct Model::Bound {
  Var w_v, b_c;
  GruVars forward, backward;
  AttentionVars attention;
  Var w_c, w_s, b_s;
};

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  declare(seed);
}

Model::Model(ModelConfig config, ParamStore params) : config_(std::move(config)) {
  config_.validate();
  Model reference(config_, 0);
  const ParamStore& expected = reference.params();
  if (params.size() != expected.size()) {
    throw ConfigError("model: expected " + std::to_string(expected.size()) + " parameters for variant " +
                      to_string(config_.variant) + ", got " + std::to_string(params.size()));
  }
  // Rebuild in canonical order with the reference regularization flags.
  for (ParamId i = 0; i < expected.size(); ++i) {
    const auto found = params.find(expected.name(i));
    if (!found) throw ConfigError("model: missing parameter '" + expected.name(i) + "'");
    if (params.value(*found).shape() != expected.value(i).shape()) {
      throw ConfigError("model: parameter '" + expected.name(i) + "' has shape " +
                        shape_string(params.value(*found).shape()) + ", expected " +
                        shape_string(expected.value(i).shape()));
    }
    params_.add(expected.name(i), std::move(params.value(*found)), expected.regularized(i));
  }
  locate();
}

void Model::declare(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t m = config_.embed_dim, p = config_.hidden_dim, w = config_.encoder_width();
  w_v_ = params_.add("embed.W_v", {m, config_.n_codes}, InitScheme::glorot_uniform, rng);
  b_c_ = params_.add("embed.b_c", {m}, InitScheme::zeros, rng);
  forward_gru_ = GruParams::declare(params_, "gru_fwd", m, p, rng);
  if (is_bidirectional(config_.variant)) backward_gru_ = GruParams::declare(params_, "gru_bwd", m, p, rng);
  std::size_t out_width = w;
  if (const auto kind = attention_kind(config_.variant)) {
    attention_ = AttentionParams::declare(params_, *kind, w, config_.attention_dim, rng);
    out_width = config_.resolved_output_dim();
    w_c_ = params_.add("out.W_c", {out_width, 2 * w}, InitScheme::glorot_uniform, rng);
  }
  w_s_ = params_.add("out.W_s", {config_.n_categories, out_width}, InitScheme::glorot_uniform, rng);
  b_s_ = params_.add("out.b_s", {config_.n_categories}, InitScheme::zeros, rng);
}

void Model::locate() {
  w_v_ = params_.id("embed.W_v");
  b_c_ = params_.id("embed.b_c");
  forward_gru_ = GruParams::find(params_, "gru_fwd");
  if (is_bidirectional(config_.variant)) backward_gru_ = GruParams::find(params_, "gru_bwd");
  if (const auto kind = attention_kind(config_.variant)) {
    attention_ = AttentionParams::find(params_, *kind);
    w_c_ = params_.id("out.W_c");
  }
  w_s_ = params_.id("out.W_s");
  b_s_ = params_.id("out.b_s");
}

Model::Bound Model::bind(Tape& tape) const {
  Bound b;
  b.w_v = tape.param(params_, w_v_);
  b.b_c = tape.param(params_, b_c_);
  b.forward = GruVars::bind(tape, params_, forward_gru_);
  if (is_bidirectional(config_.variant)) b.backward = GruVars::bind(tape, params_, backward_gru_);
  if (attention_kind(config_.variant)) {
    b.attention = AttentionVars::bind(tape, params_, attention_);
    b.w_c = tape.param(params_, w_c_);
  }
  b.w_s = tape.param(params_, w_s_);
  b.b_s = tape.param(params_, b_s_);
  return b;
}

Var Model::embed_visit(Tape& tape, const Tensor& multihot) const {
  const Var w_v = tape.param(params_, w_v_);
  const Var b_c = tape.param(params_, b_c_);
  return relu(add(matmul(w_v, tape.constant(multihot)), b_c));
}

Model::Graph Model::build(Tape& tape, const PatientRecord& patient, bool train, Rng& rng) const {
  const std::size_t T = patient.visits.size();
  if (T < 2) throw ContractError("forward: patient " + patient.id + " has fewer than 2 visits");
  const Bound b = bind(tape);
  const bool bidirectional = is_bidirectional(config_.variant);
  const bool full = bidirectional && config_.causality == Causality::full;
  const std::size_t steps = T - 1;
  // Full mode lets the backward pass read visit T as well.
  const std::size_t n_inputs = full ? T : steps;

  std::vector<Var> embedded;
  embedded.reserve(n_inputs);
  for (std::size_t i = 0; i < n_inputs; ++i) {
    const std::string context = "patient " + patient.id + " visit " + std::to_string(i + 1);
    const Var x = tape.constant(encode_multihot(patient.visits[i], config_.n_codes, context));
    const Var v = relu(add(matmul(b.w_v, x), b.b_c));
    embedded.push_back(dropout(v, config_.dropout_rate, train, rng));
  }

  const HiddenSequence forward = run_forward(b.forward, std::span<const Var>(embedded).first(steps));
  HiddenSequence backward_full;
  if (full) backward_full = run_backward(b.backward, embedded);

  const auto attn_kind = attention_kind(config_.variant);
  const std::size_t width = config_.encoder_width();
  Graph graph;
  graph.predictions.reserve(steps);
  graph.attention.resize(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    // States h_1..h_t visible at step t = s + 1.
    std::vector<Var> states;
    if (!bidirectional) {
      states.assign(forward.states.begin(), forward.states.begin() + s + 1);
    } else if (full) {
      for (std::size_t i = 0; i <= s; ++i) states.push_back(concat(forward.states[i], backward_full.states[i]));
    } else if (!attn_kind) {
      // Only h_t is consumed; its backward half has read visit t alone.
      const Var zero = tape.constant(Tensor({config_.hidden_dim}));
      states.resize(s + 1);
      states[s] = concat(forward.states[s], gru_step(b.backward, embedded[s], zero));
    } else {
      const HiddenSequence back = run_backward(b.backward, std::span<const Var>(embedded).first(s + 1));
      for (std::size_t i = 0; i <= s; ++i) states.push_back(concat(forward.states[i], back.states[i]));
    }
    const Var h_t = states[s];
    Var features = h_t;
    if (attn_kind) {
      Var context;
      if (s == 0) {
        context = tape.constant(Tensor({width}));
      } else {
        const AttentionOutput out = attend(b.attention, std::span<const Var>(states).first(s), h_t);
        context = out.context;
        graph.attention[s] = out.weights;
      }
      features = attentional_state(b.w_c, context, h_t);
    }
    features = dropout(features, config_.dropout_rate, train, rng);
    graph.predictions.push_back(softmax(add(matmul(b.w_s, features), b.b_s)));
  }
  return graph;
}

std::vector<PredictionRecord> Model::forward_patient(const PatientRecord& patient,
                                                     const Vocabulary& vocabulary, bool train,
                                                     Rng& rng) const {
  if (vocabulary.n_codes() != config_.n_codes || vocabulary.n_categories() != config_.n_categories) {
    throw ConfigError("forward: vocabulary (" + std::to_string(vocabulary.n_codes()) + " codes, " +
                      std::to_string(vocabulary.n_categories()) + " categories) does not match model (" +
                      std::to_string(config_.n_codes) + ", " + std::to_string(config_.n_categories) + ")");
  }
  Tape tape;
  const Graph graph = build(tape, patient, train, rng);
  std::vector<PredictionRecord> records;
  records.reserve(graph.predictions.size());
  for (std::size_t s = 0; s < graph.predictions.size(); ++s) {
    PredictionRecord rec;
    rec.patient_id = patient.id;
    rec.step = s + 1;
    rec.patient_visits = patient.visits.size();
    rec.scores = graph.predictions[s].value().values();
    const Tensor y = category_target(patient.visits[s + 1], vocabulary);
    rec.truth.resize(y.size());
    for (std::size_t g = 0; g < y.size(); ++g) rec.truth[g] = y[g] > 0.5 ? 1 : 0;
    if (graph.attention[s].valid()) rec.attention = graph.attention[s].value().values();
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<PredictionRecord> Model::predict(const PatientRecord& patient,
                                             const Vocabulary& vocabulary) const {
  Rng unused(0);
  return forward_patient(patient, vocabulary, false, unused);
}

std::vector<Tensor> step_targets(const PatientRecord& patient, const Vocabulary& vocabulary) {
  std::vector<Tensor> targets;
  for (std::size_t t = 1; t < patient.visits.size(); ++t) {
    targets.push_back(category_target(patient.visits[t], vocabulary));
  }
  return targets;
}

Var sequence_loss(std::span<const Var> predictions, std::span<const Tensor> targets, double eps) {
  if (predictions.empty() || predictions.size() != targets.size()) {
    throw ContractError("sequence_loss: " + std::to_string(predictions.size()) + " predictions vs " +
                        std::to_string(targets.size()) + " targets");
  }
  Tape& tape = predictions[0].tape();
  std::vector<Var> per_step;
  per_step.reserve(predictions.size());
  for (std::size_t s = 0; s < predictions.size(); ++s) {
    const Tensor& y = targets[s];
    Tensor not_y(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) not_y[i] = 1.0 - y[i];
    const Var p = clamp(predictions[s], eps, 1.0 - eps);
    const Var pos = dot(tape.constant(y), log(p));
    const Var neg = dot(tape.constant(std::move(not_y)), log(affine(p, -1.0, 1.0)));
    per_step.push_back(add(pos, neg));
  }
  return affine(reduce_sum(concat(per_step, 0)), -1.0 / static_cast<double>(predictions.size()), 0.0);
}

Var l2_penalty(Tape& tape, const ParamStore& params, double coefficient) {
  std::vector<Var> terms;
  for (ParamId i = 0; i < params.size(); ++i) {
    if (!params.regularized(i)) continue;
    const Var w = tape.param(params, i);
    terms.push_back(reduce_sum(mul(w, w)));
  }
  if (terms.empty()) return tape.constant(Tensor::scalar(0.0));
  return affine(reduce_sum(concat(terms, 0)), coefficient, 0.0);
}

double loss(std::span<const PredictionRecord> records, const ParamStore& params,
            double l2_coefficient, double eps) {
  std::map<std::string, std::pair<double, std::size_t>> per_patient;
  for (const PredictionRecord& r : records) {
    double step = 0.0;
    for (std::size_t g = 0; g < r.scores.size(); ++g) {
      const double p = std::clamp(r.scores[g], eps, 1.0 - eps);
      step -= r.truth[g] ? std::log(p) : std::log(1.0 - p);
    }
    auto& acc = per_patient[r.patient_id];
    acc.first += step;
    acc.second += 1;
  }
  double total = 0.0;
  for (const auto& [id, acc] : per_patient) total += acc.first / static_cast<double>(acc.second);
  if (!per_patient.empty()) total /= static_cast<double>(per_patient.size());
  double l2 = 0.0;
  for (ParamId i = 0; i < params.size(); ++i) {
    if (params.regularized(i)) l2 += params.value(i).squared_norm();
  }
  return total + l2_coefficient * l2;
}

}  // namespace dipole
