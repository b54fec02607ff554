#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "support.hpp"

using namespace dipole;
using dipole::testing::random_tensor;

namespace {

using Vec = std::vector<double>;

// Reference forward pass on plain vectors, written directly from the model
// equations. Parameters are looked up by name.
class Reference {
 public:
  explicit Reference(const Model& model) : model_(model), c_(model.config()) {}

  struct Step {
    Vec scores;
    Vec attention;
  };

  std::vector<Step> run(const PatientRecord& patient) const {
    const std::size_t T = patient.visits.size();
    std::vector<Vec> v;
    for (const Visit& visit : patient.visits) {
      Vec x(c_.n_codes, 0.0);
      for (std::uint32_t code : visit.codes()) x[code] = 1.0;
      Vec e = add(mv("embed.W_v", x), vec("embed.b_c"));
      for (double& a : e) a = std::max(a, 0.0);
      v.push_back(e);
    }
    const bool bi = is_bidirectional(c_.variant);
    const auto kind = attention_kind(c_.variant);
    std::vector<Vec> f(T - 1);
    Vec h(c_.hidden_dim, 0.0);
    for (std::size_t t = 0; t + 1 < T; ++t) f[t] = h = gru("gru_fwd", v[t], h);

    std::vector<Step> out;
    for (std::size_t t = 0; t + 1 < T; ++t) {
      // Encoder states visible when predicting from visit t.
      std::vector<Vec> H;
      if (!bi) {
        H.assign(f.begin(), f.begin() + t + 1);
      } else {
        // Backward pass over visits 0..last.
        const std::size_t last = c_.causality == Causality::full ? T - 1 : t;
        std::vector<Vec> b(last + 1);
        Vec hb(c_.hidden_dim, 0.0);
        for (std::size_t k = last + 1; k-- > 0;) b[k] = hb = gru("gru_bwd", v[k], hb);
        for (std::size_t i = 0; i <= t; ++i) H.push_back(cat(f[i], b[i]));
      }
      Step step;
      Vec feat = H[t];
      if (kind) {
        Vec ctx(H[t].size(), 0.0);
        if (t > 0) {
          Vec scores;
          for (std::size_t i = 0; i < t; ++i) scores.push_back(score(*kind, H[t], H[i]));
          step.attention = softmax(scores);
          for (std::size_t i = 0; i < t; ++i) {
            for (std::size_t d = 0; d < ctx.size(); ++d) ctx[d] += step.attention[i] * H[i][d];
          }
        }
        feat = mv("out.W_c", cat(ctx, H[t]));
        for (double& a : feat) a = std::tanh(a);
      }
      step.scores = softmax(add(mv("out.W_s", feat), vec("out.b_s")));
      out.push_back(step);
    }
    return out;
  }

 private:
  const Tensor& p(const std::string& name) const { return model_.params().value(model_.params().id(name)); }
  Vec vec(const std::string& name) const { return p(name).values(); }
  Vec mv(const std::string& name, const Vec& x) const {
    const Tensor& w = p(name);
    Vec y(w.rows(), 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i) {
      for (std::size_t j = 0; j < w.cols(); ++j) y[i] += w.at(i, j) * x[j];
    }
    return y;
  }
  static Vec add(Vec a, const Vec& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
  }
  static Vec cat(Vec a, const Vec& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  }
  static Vec softmax(const Vec& s) {
    double mx = s[0];
    for (double x : s) mx = std::max(mx, x);
    Vec e;
    double z = 0;
    for (double x : s) z += e.emplace_back(std::exp(x - mx));
    for (double& x : e) x /= z;
    return e;
  }
  static double sig(double x) { return 1 / (1 + std::exp(-x)); }

  Vec gru(const std::string& g, const Vec& x, const Vec& h) const {
    const Vec z0 = add(add(mv(g + ".W_z", x), mv(g + ".U_z", h)), vec(g + ".b_z"));
    const Vec r0 = add(add(mv(g + ".W_r", x), mv(g + ".U_r", h)), vec(g + ".b_r"));
    Vec rh(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) rh[i] = sig(r0[i]) * h[i];
    const Vec n0 = add(add(mv(g + ".W_h", x), mv(g + ".U_h", rh)), vec(g + ".b_h"));
    Vec out(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) out[i] = (1 - sig(z0[i])) * h[i] + sig(z0[i]) * std::tanh(n0[i]);
    return out;
  }

  double score(AttentionKind kind, const Vec& ht, const Vec& hi) const {
    if (kind == AttentionKind::location) {
      const Vec w = vec("attn.W_alpha");
      double s = p("attn.b_alpha")[0];
      for (std::size_t d = 0; d < hi.size(); ++d) s += w[d] * hi[d];
      return s;
    }
    if (kind == AttentionKind::general) {
      const Vec wh = mv("attn.W_alpha", hi);
      double s = 0;
      for (std::size_t d = 0; d < ht.size(); ++d) s += ht[d] * wh[d];
      return s;
    }
    const Vec pre = mv("attn.W_alpha", cat(ht, hi));
    const Vec v = vec("attn.v_alpha");
    double s = 0;
    for (std::size_t k = 0; k < v.size(); ++k) s += v[k] * std::tanh(pre[k]);
    return s;
  }

  const Model& model_;
  ModelConfig c_;
};

ModelConfig toy_config(Variant variant, Causality causality = Causality::prefix) {
  ModelConfig c;
  c.variant = variant;
  c.embed_dim = 2;
  c.hidden_dim = 2;
  c.attention_dim = 2;
  c.output_dim = 3;
  c.n_codes = 4;
  c.n_categories = 2;
  c.dropout_rate = 0.5;
  c.causality = causality;
  return c;
}

Vocabulary toy_vocabulary() { return Vocabulary({"a", "b", "c", "d"}, {"G0", "G1"}, {0, 0, 1, 1}); }

// Random parameters everywhere, including biases.
void randomize(Model& model, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  ParamStore& params = model.params();
  for (ParamId id = 0; id < params.size(); ++id) {
    params.value(id) = random_tensor(rng, params.value(id).shape(), -scale, scale);
  }
}

PatientRecord random_patient(Rng& rng, std::size_t T, std::size_t n_codes) {
  PatientRecord p{"r", {}};
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<std::uint32_t> codes;
    const std::size_t k = 1 + rng.index(n_codes);
    for (std::size_t i = 0; i < k; ++i) codes.push_back(static_cast<std::uint32_t>(rng.index(n_codes)));
    p.visits.emplace_back(codes);
  }
  return p;
}

void perturb(Model& model, const std::string& name, double delta) {
  Tensor& t = model.params().value(model.params().id(name));
  for (double& x : t.data()) x += delta;
}

}  // namespace

TEST_CASE("variant names") {
  for (Variant v : kAllVariants) CHECK(parse_variant(to_string(v)) == v);
  CHECK(parse_variant("dipole-") == Variant::dipole_plain);
  CHECK_THROWS_AS(parse_variant("lstm"), ConfigError);
  CHECK(parse_causality("full") == Causality::full);
  CHECK_THROWS_AS(parse_causality("sideways"), ConfigError);
}

TEST_CASE("visit embedding") {
  ModelConfig c = toy_config(Variant::rnn);
  c.n_codes = 3;
  c.embed_dim = 3;
  Model model(c, 1);
  Tensor& w = model.params().value(model.params().id("embed.W_v"));
  Tensor& b = model.params().value(model.params().id("embed.b_c"));

  SUBCASE("identity weights copy the multi-hot vector") {
    w = Tensor::identity(3);
    b.fill(0.0);
    Tape tape;
    CHECK(model.embed_visit(tape, Tensor::vector({1, 1, 0})).value().values() == Vec{1, 1, 0});
  }
  SUBCASE("negative pre-activation clamps to zero") {
    w = Tensor::identity(3);
    for (std::size_t j = 0; j < 3; ++j) w.at(1, j) = -1.0;
    b.fill(0.0);
    Tape tape;
    CHECK(model.embed_visit(tape, Tensor::vector({1, 1, 0})).value()[1] == 0.0);
  }
  SUBCASE("multi-hot additivity before the ReLU") {
    Rng rng(2);
    w = random_tensor(rng, {3, 3}, 0.1, 1);
    b = random_tensor(rng, {3}, 0.1, 1);
    Tape tape;
    const Tensor e = model.embed_visit(tape, Tensor::vector({1, 0, 1})).value();
    for (std::size_t i = 0; i < 3; ++i) CHECK(e[i] == doctest::Approx(w.at(i, 0) + w.at(i, 2) + b[i]).epsilon(1e-15));
  }
}

TEST_CASE("parameter layout") {
  const Model dipole_c(toy_config(Variant::dipole_c), 1);
  const ParamStore& p = dipole_c.params();
  CHECK(p.value(p.id("embed.W_v")).shape() == Shape{2, 4});
  CHECK(p.value(p.id("gru_fwd.W_z")).shape() == Shape{2, 2});
  CHECK(p.value(p.id("attn.W_alpha")).shape() == Shape{2, 8});
  CHECK(p.value(p.id("attn.v_alpha")).shape() == Shape{2});
  CHECK(p.value(p.id("out.W_c")).shape() == Shape{3, 8});
  CHECK(p.value(p.id("out.W_s")).shape() == Shape{2, 3});
  CHECK(p.regularized(p.id("attn.W_alpha")));
  CHECK_FALSE(p.regularized(p.id("out.b_s")));
  CHECK_FALSE(p.find("attn.b_alpha").has_value());

  const Model rnn(toy_config(Variant::rnn), 1);
  CHECK_FALSE(rnn.params().find("gru_bwd.W_z").has_value());
  CHECK_FALSE(rnn.params().find("out.W_c").has_value());
  CHECK(rnn.params().value(rnn.params().id("out.W_s")).shape() == Shape{2, 2});

  ModelConfig r0 = toy_config(Variant::dipole_l);
  r0.output_dim = 0;
  CHECK(Model(r0, 1).params().value(Model(r0, 1).params().id("out.W_c")).shape() == Shape{4, 8});
}

TEST_CASE("3-visit toy matches the reference forward pass for every variant") {
  const Vocabulary vocab = toy_vocabulary();
  const PatientRecord patient{"toy", {Visit({0, 1}), Visit({2}), Visit({1, 3})}};
  for (Causality causality : {Causality::prefix, Causality::full}) {
    for (Variant variant : kAllVariants) {
      CAPTURE(to_string(variant));
      CAPTURE(to_string(causality));
      Model model(toy_config(variant, causality), 3);
      randomize(model, 17);
      const auto records = model.predict(patient, vocab);
      const auto expected = Reference(model).run(patient);
      REQUIRE(records.size() == 2);
      for (std::size_t t = 0; t < 2; ++t) {
        CHECK(records[t].step == t + 1);
        for (std::size_t g = 0; g < 2; ++g) {
          CHECK(records[t].scores[g] == doctest::Approx(expected[t].scores[g]).epsilon(1e-13));
        }
        REQUIRE(records[t].attention.size() == expected[t].attention.size());
        for (std::size_t i = 0; i < expected[t].attention.size(); ++i) {
          CHECK(records[t].attention[i] == doctest::Approx(expected[t].attention[i]).epsilon(1e-13));
        }
      }
      CHECK(records[0].truth == std::vector<std::uint8_t>{0, 1});
      CHECK(records[1].truth == std::vector<std::uint8_t>{1, 1});
    }
  }
}

TEST_CASE("reference agreement on random patients") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(seed);
    const Variant variant = kAllVariants[rng.index(kAllVariants.size())];
    const Causality causality = rng.bernoulli(0.5) ? Causality::full : Causality::prefix;
    CAPTURE(to_string(variant));
    Model model(toy_config(variant, causality), seed);
    randomize(model, seed + 100);
    const PatientRecord patient = random_patient(rng, 2 + rng.index(6), 4);
    const auto records = model.predict(patient, toy_vocabulary());
    const auto expected = Reference(model).run(patient);
    for (std::size_t t = 0; t < records.size(); ++t) {
      for (std::size_t g = 0; g < 2; ++g) {
        CHECK(records[t].scores[g] == doctest::Approx(expected[t].scores[g]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("hand-evaluated rnn step: saturated update gate, W_h = I") {
  // With b_z = 100 and every other GRU parameter 0 except W_h = I, the first
  // hidden state is tanh(v_1) to within e^-100.
  Model model(toy_config(Variant::rnn), 1);
  ParamStore& p = model.params();
  for (ParamId id = 0; id < p.size(); ++id) p.value(id).fill(0.0);
  p.value(p.id("embed.W_v")) = Tensor::matrix({{1, 0, 0, 0.5}, {0, 2, 0, 0}});
  p.value(p.id("embed.b_c")) = Tensor::vector({0.1, -0.3});
  p.value(p.id("gru_fwd.b_z")).fill(100.0);
  p.value(p.id("gru_fwd.W_h")) = Tensor::identity(2);
  p.value(p.id("out.W_s")) = Tensor::matrix({{1, -1}, {0.5, 2}});
  p.value(p.id("out.b_s")) = Tensor::vector({0.2, 0});

  const PatientRecord patient{"t", {Visit({0, 1}), Visit({3})}};
  const auto records = model.predict(patient, toy_vocabulary());
  REQUIRE(records.size() == 1);
  // v_1 = relu([1 + 0.1, 2 - 0.3]) = [1.1, 1.7]
  const double h0 = std::tanh(1.1), h1 = std::tanh(1.7);
  const double s0 = h0 - h1 + 0.2, s1 = 0.5 * h0 + 2 * h1;
  const double z = std::exp(s0) + std::exp(s1);
  CHECK(records[0].scores[0] == doctest::Approx(std::exp(s0) / z).epsilon(1e-13));
  CHECK(records[0].scores[1] == doctest::Approx(std::exp(s1) / z).epsilon(1e-13));
  CHECK(records[0].attention.empty());
}

TEST_CASE("outputs are distributions and attention has t-1 weights") {
  for (Variant variant : kAllVariants) {
    Model model(tiny_model_config(variant), 5);
    const PatientRecord patient = tiny_patient(6, 7);
    const auto records = model.predict(patient, tiny_vocabulary());
    REQUIRE(records.size() == 6);
    for (const PredictionRecord& r : records) {
      double sum = 0;
      for (double s : r.scores) {
        CHECK(s > 0);
        sum += s;
      }
      CHECK(std::abs(sum - 1) < 1e-6);
      CHECK(r.attention.size() == (attention_kind(variant) && r.step >= 2 ? r.step - 1 : 0));
    }
  }
}

TEST_CASE("attention is bypassed at t = 1 and wired for t >= 2") {
  for (Variant variant : {Variant::rnn_l, Variant::rnn_g, Variant::rnn_c, Variant::dipole_l, Variant::dipole_g,
                          Variant::dipole_c}) {
    CAPTURE(to_string(variant));
    Model model(tiny_model_config(variant), 2);
    randomize(model, 3);
    const PatientRecord patient = tiny_patient(4, 5);
    const auto before = model.predict(patient, tiny_vocabulary());
    perturb(model, "attn.W_alpha", 0.5);
    if (model.params().find("attn.v_alpha")) perturb(model, "attn.v_alpha", 0.5);
    const auto after = model.predict(patient, tiny_vocabulary());
    CHECK(before[0].scores == after[0].scores);
    bool changed = false;
    for (std::size_t t = 1; t < before.size(); ++t) changed = changed || before[t].scores != after[t].scores;
    CHECK(changed);
  }
}

TEST_CASE("prefix mode: later visits never reach earlier predictions") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const Variant variant = kAllVariants[seed % kAllVariants.size()];
    Model model(tiny_model_config(variant), seed);
    randomize(model, seed);
    const std::size_t T = 3 + rng.index(5);
    const PatientRecord patient = random_patient(rng, T, 5);
    const std::size_t t = 1 + rng.index(T - 2);  // prediction step
    PatientRecord changed = patient;
    // Visits t+1..T (1-based), including the visit being predicted.
    for (std::size_t j = t; j < T; ++j) changed.visits[j] = random_patient(rng, 1, 5).visits[0];
    const auto a = model.predict(patient, tiny_vocabulary());
    const auto b = model.predict(changed, tiny_vocabulary());
    for (std::size_t s = 0; s < t; ++s) {
      CHECK(a[s].scores == b[s].scores);
      CHECK(a[s].attention == b[s].attention);
    }
  }
}

TEST_CASE("full mode lets the target visit leak into the prediction") {
  Model model(tiny_model_config(Variant::dipole_plain, Causality::full), 1);
  randomize(model, 2);
  const PatientRecord patient{"p", {Visit({0}), Visit({1}), Visit({2})}};
  PatientRecord changed = patient;
  changed.visits[1] = Visit({3, 4});
  CHECK(model.predict(patient, tiny_vocabulary())[0].scores != model.predict(changed, tiny_vocabulary())[0].scores);
}

TEST_CASE("loss examples") {
  ParamStore none;
  SUBCASE("uniform prediction of a one-hot target costs 2 log 2 per step") {
    PredictionRecord r{"p", 1, 2, {0.5, 0.5}, {1, 0}, {}};
    CHECK(loss(std::vector{r}, none, 0.0) == doctest::Approx(2 * std::log(2.0)).epsilon(1e-15));
    Tape tape;
    const Var l = sequence_loss(std::vector{tape.constant(Tensor::vector({0.5, 0.5}))},
                                std::vector{Tensor::vector({1, 0})});
    CHECK(l.value()[0] == doctest::Approx(2 * std::log(2.0)).epsilon(1e-15));
  }
  SUBCASE("exact predictions cost |G| * -log(1 - eps)") {
    PredictionRecord r{"p", 1, 2, {1.0, 0.0, 0.0}, {1, 0, 0}, {}};
    CHECK(loss(std::vector{r}, none, 0.0) == doctest::Approx(-3 * std::log(1 - kProbabilityClamp)).epsilon(1e-9));
    CHECK(loss(std::vector{r}, none, 0.0) < 1e-7);
  }
  SUBCASE("mean over steps, then over patients") {
    const std::vector<PredictionRecord> rs{{"a", 1, 3, {0.5, 0.5}, {1, 0}, {}},
                                           {"a", 2, 3, {0.5, 0.5}, {1, 1}, {}},
                                           {"b", 1, 2, {0.25, 0.75}, {0, 1}, {}}};
    const double a = 2 * std::log(2.0);
    const double b = -(std::log(0.75) + std::log(0.75));
    CHECK(loss(rs, none, 0.0) == doctest::Approx((a + b) / 2).epsilon(1e-14));
  }
  SUBCASE("doubling the L2 coefficient doubles the regularization gap") {
    Model model(tiny_model_config(Variant::dipole_c), 1);
    const auto records = model.predict(tiny_patient(1), tiny_vocabulary());
    const double base = loss(records, model.params(), 0.0);
    const double gap1 = loss(records, model.params(), 0.01) - base;
    const double gap2 = loss(records, model.params(), 0.02) - base;
    CHECK(gap1 > 0);
    CHECK(gap2 == doctest::Approx(2 * gap1).epsilon(1e-12));
  }
}

TEST_CASE("L2 covers weight matrices only") {
  Model model(tiny_model_config(Variant::dipole_l), 1);
  randomize(model, 9);
  const ParamStore& p = model.params();
  double expected = 0;
  for (ParamId id = 0; id < p.size(); ++id) {
    const std::string& name = p.name(id);
    const std::string leaf = name.substr(name.find('.') + 1);
    if (leaf[0] == 'b') continue;  // biases: b_c, b_z, b_r, b_h, b_alpha, b_s
    for (double x : p.value(id).values()) expected += x * x;
  }
  Tape tape;
  CHECK(l2_penalty(tape, p, 0.5).value()[0] == doctest::Approx(0.5 * expected).epsilon(1e-14));
}

TEST_CASE("end-to-end gradient check, tiny config, all variants") {
  for (Causality causality : {Causality::prefix, Causality::full}) {
    for (Variant variant : kAllVariants) {
      CAPTURE(to_string(variant));
      CAPTURE(to_string(causality));
      const GradCheckReport report = check_model_gradients(variant, causality, 42);
      CAPTURE(report.max_relative_error());
      CHECK(report.passed);
    }
  }
}

TEST_CASE("gradient check with a fixed dropout mask") {
  ModelConfig c = tiny_model_config(Variant::dipole_c);
  c.dropout_rate = 0.3;
  Model model(c, 4);
  const PatientRecord patient = tiny_patient(8);
  const auto targets = step_targets(patient, tiny_vocabulary());
  GraphBuilder f = [&](Tape& tape, const ParamStore&) {
    Rng mask(77);
    return sequence_loss(model.build(tape, patient, true, mask).predictions, targets);
  };
  CHECK(grad_check(f, model.params()).passed);
}

TEST_CASE("config validation and vocabulary mismatch") {
  ModelConfig c = toy_config(Variant::dipole_c);
  c.dropout_rate = 1.0;
  CHECK_THROWS_AS(Model(c, 1), ConfigError);
  c = toy_config(Variant::dipole_c);
  c.attention_dim = 0;
  CHECK_THROWS_AS(Model(c, 1), ConfigError);
  Model model(toy_config(Variant::rnn), 1);
  CHECK_THROWS_AS(model.predict(tiny_patient(1), tiny_vocabulary()), ConfigError);
  CHECK_THROWS_AS(model.predict(PatientRecord{"one", {Visit({0})}}, toy_vocabulary()), ContractError);
}

TEST_CASE("checkpoint round trip") {
  testing::TempDir dir;
  const std::string prefix = dir.file("model");
  for (Variant variant : kAllVariants) {
    CAPTURE(to_string(variant));
    Model model(tiny_model_config(variant, Causality::full), 3);
    save_model(model, prefix, {{"note", "x"}});
    const LoadedModel loaded = load_model(prefix);
    CHECK(loaded.metadata["note"] == "x");
    CHECK(to_json(loaded.model.config()) == to_json(model.config()));
    const ParamStore rounded = round_to_float32(model.params());
    REQUIRE(loaded.model.params().size() == rounded.size());
    for (ParamId id = 0; id < rounded.size(); ++id) {
      CHECK(loaded.model.params().name(id) == rounded.name(id));
      CHECK(loaded.model.params().value(id) == rounded.value(id));
      CHECK(loaded.model.params().regularized(id) == model.params().regularized(id));
    }
    const Model reference(model.config(), rounded);
    const PatientRecord patient = tiny_patient(2);
    CHECK(loaded.model.predict(patient, tiny_vocabulary())[2].scores ==
          reference.predict(patient, tiny_vocabulary())[2].scores);
  }
}

TEST_CASE("checkpoint errors") {
  testing::TempDir dir;
  const std::string prefix = dir.file("m");
  Model model(tiny_model_config(Variant::rnn_l), 3);
  save_model(model, prefix);
  const auto paths = CheckpointPaths::from_prefix(prefix);

  SUBCASE("missing files") { CHECK_THROWS_AS(load_model(dir.file("absent")), DataError); }
  SUBCASE("truncated payload") {
    std::filesystem::resize_file(paths.payload, std::filesystem::file_size(paths.payload) - 4);
    CHECK_THROWS_AS(load_model(prefix), DataError);
  }
  SUBCASE("unsupported version") {
    nlohmann::json manifest = nlohmann::json::parse(testing::read_file(paths.manifest));
    manifest["format_version"] = 99;
    std::ofstream(paths.manifest) << manifest.dump();
    CHECK_THROWS_AS(load_model(prefix), DataError);
  }
  SUBCASE("shape disagreeing with the config") {
    ParamStore store = model.params();
    ModelConfig other = model.config();
    other.hidden_dim = 4;
    CHECK_THROWS_AS(Model(other, store), ConfigError);
  }
}
