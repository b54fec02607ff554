#include "dipole/diagnostics.hpp"

#include "dipole/ops.hpp"
#include "dipole/rng.hpp"

namespace dipole {

ModelConfig tiny_model_config(Variant variant, Causality causality) {
  ModelConfig c;
  c.variant = variant;
  c.embed_dim = 3;
  c.hidden_dim = 3;
  c.attention_dim = 2;
  c.output_dim = 6;
  c.n_codes = 5;
  c.n_categories = 3;
  c.dropout_rate = 0.0;
  c.l2_coefficient = 0.001;
  c.causality = causality;
  return c;
}

Vocabulary tiny_vocabulary() {
  return Vocabulary({"c0", "c1", "c2", "c3", "c4"}, {"g0", "g1", "g2"}, {0, 0, 1, 1, 2});
}

PatientRecord tiny_patient(std::uint64_t seed, std::size_t visits) {
  Rng rng(seed);
  PatientRecord p{"tiny" + std::to_string(seed), {}};
  for (std::size_t t = 0; t < visits; ++t) {
    std::vector<std::uint32_t> codes;
    const std::size_t n = 1 + rng.index(3);
    for (std::size_t i = 0; i < n; ++i) codes.push_back(static_cast<std::uint32_t>(rng.index(5)));
    p.visits.emplace_back(std::move(codes));
  }
  return p;
}

GradCheckReport check_model_gradients(Variant variant, Causality causality, std::uint64_t seed,
                                      double eps, double tolerance) {
  const ModelConfig config = tiny_model_config(variant, causality);
  Model model(config, seed);
  const Vocabulary vocab = tiny_vocabulary();
  const PatientRecord patient = tiny_patient(mix_seed(seed, 1));
  const auto targets = step_targets(patient, vocab);
  GraphBuilder objective = [&](Tape& tape, const ParamStore& params) {
    Rng unused(0);
    const Model::Graph graph = model.build(tape, patient, false, unused);
    return add(sequence_loss(graph.predictions, targets), l2_penalty(tape, params, config.l2_coefficient));
  };
  return grad_check(objective, model.params(), eps, tolerance);
}

}  // namespace dipole
