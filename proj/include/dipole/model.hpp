#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dipole/attention.hpp"
#include "dipole/ehr_data.hpp"
#include "dipole/params.hpp"
#include "dipole/recurrent.hpp"
#include "dipole/tape.hpp"

namespace dipole {

// rnn*: unidirectional GRU encoder; dipole*: bidirectional. Suffix _l/_g/_c
// selects location/general/concat attention; rnn and dipole_plain have none.
enum class Variant { rnn, rnn_l, rnn_g, rnn_c, dipole_plain, dipole_l, dipole_g, dipole_c };

inline constexpr std::array<Variant, 8> kAllVariants{
    Variant::rnn,          Variant::rnn_l,    Variant::rnn_g,    Variant::rnn_c,
    Variant::dipole_plain, Variant::dipole_l, Variant::dipole_g, Variant::dipole_c};

std::string to_string(Variant variant);
Variant parse_variant(std::string_view name);
bool is_bidirectional(Variant variant);
std::optional<AttentionKind> attention_kind(Variant variant);

// How the backward GRU is wired when predicting step t.
//   prefix: it reads only visits 1..t (no access to the target visit).
//   full:   it reads the whole sequence, including later visits.
enum class Causality { prefix, full };

std::string to_string(Causality mode);
Causality parse_causality(std::string_view name);

struct ModelConfig {
  Variant variant = Variant::dipole_c;
  std::size_t embed_dim = 256;      // m
  std::size_t hidden_dim = 256;     // p
  std::size_t attention_dim = 128;  // q
  std::size_t output_dim = 0;       // r; 0 means 2p
  std::size_t n_codes = 0;
  std::size_t n_categories = 0;
  double dropout_rate = 0.5;
  double l2_coefficient = 0.001;
  Causality causality = Causality::prefix;

  // p for rnn*, 2p for dipole*.
  std::size_t encoder_width() const;
  std::size_t resolved_output_dim() const { return output_dim ? output_dim : 2 * hidden_dim; }
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Prediction for the visit after step `step` (1-based).
struct PredictionRecord {
  std::string patient_id;
  std::size_t step = 0;
  std::size_t patient_visits = 0;
  std::vector<double> scores;       // softmax output over categories
  std::vector<std::uint8_t> truth;  // categories present in visit step+1
  std::vector<double> attention;    // weights over steps 1..step-1, empty if none
};

class Model {
 public:
  // Fresh parameters: Glorot-uniform weights, zero biases.
  Model(ModelConfig config, std::uint64_t seed);
  // Adopts existing parameters; throws ConfigError on missing names or
  // shapes that disagree with the config.
  Model(ModelConfig config, ParamStore params);

  const ModelConfig& config() const { return config_; }
  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }

  // Per-step outputs of one recorded forward pass. attention[s] is invalid
  // for non-attentive variants and for the first step.
  struct Graph {
    std::vector<Var> predictions;
    std::vector<Var> attention;
  };

  // Records the forward pass over all T-1 prediction steps of `patient`.
  Graph build(Tape& tape, const PatientRecord& patient, bool train, Rng& rng) const;

  // ReLU(W_v x + b_c), with parameters bound on `tape`.
  Var embed_visit(Tape& tape, const Tensor& multihot) const;

  std::vector<PredictionRecord> forward_patient(const PatientRecord& patient,
                                                const Vocabulary& vocabulary, bool train,
                                                Rng& rng) const;
  // Deterministic evaluation (dropout off).
  std::vector<PredictionRecord> predict(const PatientRecord& patient,
                                        const Vocabulary& vocabulary) const;

 private:
  struct Bound;
  void declare(std::uint64_t seed);
  void locate();
  Bound bind(Tape& tape) const;

  ModelConfig config_;
  ParamStore params_;
  ParamId w_v_ = 0, b_c_ = 0, w_c_ = 0, w_s_ = 0, b_s_ = 0;
  GruParams forward_gru_{}, backward_gru_{};
  AttentionParams attention_{};
};

// Category targets y_1..y_{T-1}: the categories of visits 2..T.
std::vector<Tensor> step_targets(const PatientRecord& patient, const Vocabulary& vocabulary);

inline constexpr double kProbabilityClamp = 1e-8;

// Mean over steps of -[y^T log(y_hat) + (1-y)^T log(1-y_hat)], with y_hat
// clamped into [eps, 1-eps].
Var sequence_loss(std::span<const Var> predictions, std::span<const Tensor> targets,
                  double eps = kProbabilityClamp);
// coefficient * sum of squared entries over all regularized (weight) parameters.
Var l2_penalty(Tape& tape, const ParamStore& params, double coefficient);

// Value-level objective over finished predictions: mean over patients of
// the per-patient mean step loss, plus the L2 term.
double loss(std::span<const PredictionRecord> records, const ParamStore& params,
            double l2_coefficient, double eps = kProbabilityClamp);

}  // namespace dipole
