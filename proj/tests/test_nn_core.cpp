#include <doctest.h>

#include <cmath>
#include <numeric>

#include "support.hpp"

using namespace dipole;
using dipole::testing::check_op;
using dipole::testing::OpFn;
using dipole::testing::random_shape;
using dipole::testing::random_tensor;

namespace {

std::vector<double> eval(const std::function<Var(Tape&)>& f) {
  Tape tape;
  return f(tape).value().values();
}

}  // namespace

TEST_CASE("tensor construction and shape errors") {
  const Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m.at(1, 2) == 6);
  CHECK(Tensor::identity(3).at(1, 1) == 1);
  CHECK(Tensor::identity(3).at(1, 2) == 0);
  CHECK_THROWS_AS(Tensor(Shape{0}), DimensionError);
  CHECK_THROWS_AS(Tensor(Shape{2, 2, 2}), DimensionError);
  CHECK_THROWS_AS(Tensor(Shape{2}, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK_THROWS_AS((Tensor::matrix({{1, 2}, {3}})), DimensionError);
}

TEST_CASE("forward examples") {
  CHECK(eval([](Tape& t) { return relu(t.constant(Tensor::vector({-1, 0, 2}))); }) ==
        std::vector<double>{0, 0, 2});
  for (double p : eval([](Tape& t) { return softmax(t.constant(Tensor::vector({0, 0, 0}))); })) {
    CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }
  const auto product = eval([](Tape& t) {
    return matmul(t.constant(Tensor::matrix({{1, 2}, {3, 4}})), t.constant(Tensor::matrix({{1}, {1}})));
  });
  CHECK(product == std::vector<double>{3, 7});
}

TEST_CASE("shape mismatches raise dimension errors") {
  Tape t;
  Var a = t.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  Var v3 = t.constant(Tensor::vector({1, 2, 3}));
  CHECK_THROWS_AS(matmul(a, v3), DimensionError);
  CHECK_THROWS_AS(add(a, v3), DimensionError);
  CHECK_THROWS_AS(dot(v3, t.constant(Tensor::vector({1, 2}))), DimensionError);
  CHECK_THROWS_AS(softmax(a, 2), DimensionError);
}

TEST_CASE("backward of sum(relu(x)) at [-1, 2] is [0, 1]") {
  ParamStore store;
  const ParamId x = store.add("x", Tensor::vector({-1, 2}), false);
  Tape tape;
  Gradients grads(store);
  tape.backward(reduce_sum(relu(tape.param(store, x))), grads);
  CHECK(grads[x].values() == std::vector<double>{0, 1});
}

TEST_CASE("backward accumulates without zeroing and rejects non-scalar losses") {
  ParamStore store;
  const ParamId x = store.add("x", Tensor::vector({0.3, -0.7}), false);
  Gradients grads(store);
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    tape.backward(reduce_sum(mul(tape.param(store, x), tape.param(store, x))), grads);
  }
  CHECK(grads[x][0] == doctest::Approx(4 * 0.3));
  CHECK(grads[x][1] == doctest::Approx(4 * -0.7));

  Tape tape;
  CHECK_THROWS_AS(tape.backward(tape.param(store, x), grads), ContractError);
}

TEST_CASE("softmax cross-entropy gradient at a uniform target is softmax(x) - target") {
  Rng rng(3);
  const Tensor x0 = random_tensor(rng, {5}, -2, 2);
  const Tensor target(Shape{5}, 0.2);
  ParamStore store;
  const ParamId x = store.add("x", x0, false);
  GraphBuilder ce = [&](Tape& tape, const ParamStore& params) {
    Var logp = log(softmax(tape.param(params, x)));
    return affine(reduce_sum(mul(logp, tape.constant(target))), -1.0, 0.0);
  };
  Tape tape;
  Gradients grads(store);
  tape.backward(ce(tape, store), grads);
  double z = 0;
  for (double v : x0.values()) z += std::exp(v);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(grads[x][i] == doctest::Approx(std::exp(x0[i]) / z - 0.2).epsilon(1e-12));
  }
  CHECK(grad_check(ce, store).passed);
}

TEST_CASE("grad_check flags a wrong backward") {
  ParamStore store;
  store.add("x", Tensor::vector({0.4, 1.3}), false);
  GraphBuilder broken = [](Tape& tape, const ParamStore& params) {
    Var x = tape.param(params, 0);
    Var doubled = tape.record(Tensor::vector({2 * x.value()[0], 2 * x.value()[1]}), true,
                              [id = x.id()](Tape& t, const Tensor& g) {
                                Tensor d = g;  // should be 2g
                                t.accumulate(id, d);
                              });
    return reduce_sum(doubled);
  };
  const GradCheckReport report = grad_check(broken, store);
  CHECK_FALSE(report.passed);
  CHECK(report.max_relative_error() == doctest::Approx(0.5));
}

TEST_CASE("every differentiable op passes grad_check on random small shapes, 100 seeds") {
  struct Case {
    const char* name;
    std::function<std::pair<std::vector<Tensor>, OpFn>(Rng&)> make;
  };
  const std::vector<Case> cases{
      {"matmul mat.vec",
       [](Rng& r) {
         const Shape s = random_shape(r, 2);
         return std::pair{std::vector{random_tensor(r, s), random_tensor(r, {s[1]})},
                          OpFn([](std::span<const Var> v) { return matmul(v[0], v[1]); })};
       }},
      {"matmul mat.mat",
       [](Rng& r) {
         const Shape s = random_shape(r, 2);
         return std::pair{std::vector{random_tensor(r, s), random_tensor(r, {s[1], 1 + r.index(8)})},
                          OpFn([](std::span<const Var> v) { return matmul(v[0], v[1]); })};
       }},
      {"transpose",
       [](Rng& r) {
         return std::pair{std::vector{random_tensor(r, random_shape(r, 2))},
                          OpFn([](std::span<const Var> v) { return transpose(v[0]); })};
       }},
      {"dot",
       [](Rng& r) {
         const Shape s = random_shape(r, 1);
         return std::pair{std::vector{random_tensor(r, s), random_tensor(r, s)},
                          OpFn([](std::span<const Var> v) { return dot(v[0], v[1]); })};
       }},
      {"add",
       [](Rng& r) {
         const Shape s = random_shape(r, 1 + r.index(2));
         return std::pair{std::vector{random_tensor(r, s), random_tensor(r, s)},
                          OpFn([](std::span<const Var> v) { return add(v[0], v[1]); })};
       }},
      {"add broadcast",
       [](Rng& r) {
         return std::pair{std::vector{random_tensor(r, random_shape(r, 1)), random_tensor(r, {1})},
                          OpFn([](std::span<const Var> v) { return add(v[0], v[1]); })};
       }},
      {"sub",
       [](Rng& r) {
         const Shape s = random_shape(r, 1 + r.index(2));
         return std::pair{std::vector{random_tensor(r, s), random_tensor(r, s)},
                          OpFn([](std::span<const Var> v) { return sub(v[0], v[1]); })};
       }},
      {"mul",
       [](Rng& r) {
         const Shape s = random_shape(r, 1 + r.index(2));
         return std::pair{std::vector{random_tensor(r, s), random_tensor(r, s)},
                          OpFn([](std::span<const Var> v) { return mul(v[0], v[1]); })};
       }},
      {"affine",
       [](Rng& r) {
         return std::pair{std::vector{random_tensor(r, random_shape(r, 1))},
                          OpFn([](std::span<const Var> v) { return affine(v[0], -1.5, 0.25); })};
       }},
      {"concat vectors",
       [](Rng& r) {
         return std::pair{std::vector{random_tensor(r, random_shape(r, 1)), random_tensor(r, random_shape(r, 1))},
                          OpFn([](std::span<const Var> v) { return concat(v[0], v[1]); })};
       }},
      {"concat columns",
       [](Rng& r) {
         const std::size_t rows = 1 + r.index(8);
         return std::pair{std::vector{random_tensor(r, {rows, 1 + r.index(8)}), random_tensor(r, {rows, 1 + r.index(8)})},
                          OpFn([](std::span<const Var> v) { return concat(v, 1); })};
       }},
      {"stack_rows",
       [](Rng& r) {
         const Shape s = random_shape(r, 1);
         return std::pair{std::vector{random_tensor(r, s), random_tensor(r, s), random_tensor(r, s)},
                          OpFn([](std::span<const Var> v) { return stack_rows(v); })};
       }},
      {"relu",
       [](Rng& r) {
         return std::pair{std::vector{random_tensor(r, random_shape(r, 1 + r.index(2)))},
                          OpFn([](std::span<const Var> v) { return relu(v[0]); })};
       }},
      {"tanh",
       [](Rng& r) {
         return std::pair{std::vector{random_tensor(r, random_shape(r, 1 + r.index(2)), -3, 3)},
                          OpFn([](std::span<const Var> v) { return dipole::tanh(v[0]); })};
       }},
      {"sigmoid",
       [](Rng& r) {
         return std::pair{std::vector{random_tensor(r, random_shape(r, 1 + r.index(2)), -3, 3)},
                          OpFn([](std::span<const Var> v) { return sigmoid(v[0]); })};
       }},
      {"log",
       [](Rng& r) {
         return std::pair{std::vector{random_tensor(r, random_shape(r, 1), 0.3, 3)},
                          OpFn([](std::span<const Var> v) { return dipole::log(v[0]); })};
       }},
      {"clamp",
       [](Rng& r) {
         return std::pair{std::vector{random_tensor(r, random_shape(r, 1))},
                          OpFn([](std::span<const Var> v) { return clamp(v[0], -0.4, 0.5); })};
       }},
      {"softmax vector",
       [](Rng& r) {
         return std::pair{std::vector{random_tensor(r, random_shape(r, 1), -2, 2)},
                          OpFn([](std::span<const Var> v) { return softmax(v[0]); })};
       }},
      {"softmax rows",
       [](Rng& r) {
         return std::pair{std::vector{random_tensor(r, random_shape(r, 2), -2, 2)},
                          OpFn([](std::span<const Var> v) { return softmax(v[0], 1); })};
       }},
      {"softmax columns",
       [](Rng& r) {
         return std::pair{std::vector{random_tensor(r, random_shape(r, 2), -2, 2)},
                          OpFn([](std::span<const Var> v) { return softmax(v[0], 0); })};
       }},
      {"reduce_sum",
       [](Rng& r) {
         return std::pair{std::vector{random_tensor(r, random_shape(r, 1 + r.index(2)))},
                          OpFn([](std::span<const Var> v) { return reduce_sum(v[0]); })};
       }},
      {"reduce_mean",
       [](Rng& r) {
         return std::pair{std::vector{random_tensor(r, random_shape(r, 1 + r.index(2)))},
                          OpFn([](std::span<const Var> v) { return reduce_mean(v[0]); })};
       }},
      {"dropout (fixed mask)",
       [](Rng& r) {
         const std::uint64_t mask_seed = r.next();
         return std::pair{std::vector{random_tensor(r, random_shape(r, 1))},
                          OpFn([mask_seed](std::span<const Var> v) {
                            Rng mask(mask_seed);
                            return dropout(v[0], 0.3, true, mask);
                          })};
       }},
  };
  for (const Case& c : cases) {
    CAPTURE(c.name);
    std::size_t failures = 0;
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(mix_seed(seed, 17));
      auto [inputs, op] = c.make(rng);
      const GradCheckReport report = check_op(inputs, op, seed);
      worst = std::max(worst, report.max_relative_error());
      if (!report.passed) ++failures;
    }
    CAPTURE(worst);
    CHECK(failures == 0);
  }
}

TEST_CASE("relu is non-negative and softmax rows sum to one") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    Tape tape;
    Var x = tape.constant(random_tensor(rng, random_shape(rng, 2), -5, 5));
    for (double v : relu(x).value().values()) CHECK(v >= 0.0);
    const Tensor s = softmax(x, 1).value();
    for (std::size_t r = 0; r < s.rows(); ++r) {
      double sum = 0;
      for (std::size_t c = 0; c < s.cols(); ++c) sum += s.at(r, c);
      CHECK(std::abs(sum - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("softmax survives large inputs") {
  Tape tape;
  const Tensor s = softmax(tape.constant(Tensor::vector({1000, 1000, -1000}))).value();
  CHECK(s[0] == doctest::Approx(0.5));
  CHECK(s[2] == 0.0);
}

TEST_CASE("dropout") {
  Tape tape;
  Rng rng(5);
  const Tensor x0 = Tensor::vector({1, 2, 3, 4, 5, 6, 7, 8});
  Var x = tape.constant(x0);

  SUBCASE("identity when not training or at rate 0") {
    CHECK(dropout(x, 0.5, false, rng).value() == x0);
    CHECK(dropout(x, 0.0, true, rng).value() == x0);
  }
  SUBCASE("survivors are scaled by 1/(1-rate)") {
    const Tensor y = dropout(x, 0.25, true, rng).value();
    for (std::size_t i = 0; i < y.size(); ++i) {
      CHECK((y[i] == 0.0 || y[i] == doctest::Approx(x0[i] / 0.75)));
    }
  }
  SUBCASE("expectation preserved over 10^4 masks within 2%") {
    const double input_mean = 4.5;
    double total = 0;
    const int masks = 10000;
    for (int i = 0; i < masks; ++i) {
      Tape t;
      for (double v : dropout(t.constant(x0), 0.5, true, rng).value().values()) total += v;
    }
    const double mean = total / (masks * 8.0);
    CHECK(std::abs(mean - input_mean) / input_mean < 0.02);
  }
  SUBCASE("invalid rate") {
    CHECK_THROWS_AS(dropout(x, 1.0, true, rng), ConfigError);
    CHECK_THROWS_AS(dropout(x, -0.1, true, rng), ConfigError);
  }
}

TEST_CASE("log of a non-positive value is a contract error") {
  Tape tape;
  CHECK_THROWS_AS(dipole::log(tape.constant(Tensor::vector({1, 0}))), ContractError);
}

TEST_CASE("init_param") {
  Rng rng(11);
  SUBCASE("biases are zero") {
    const Tensor b = init_param({7}, InitScheme::zeros, rng);
    for (double v : b.values()) CHECK(v == 0.0);
  }
  SUBCASE("fixed seed gives identical tensors") {
    Rng a(42), b(42);
    CHECK(init_param({4, 6}, InitScheme::glorot_uniform, a) == init_param({4, 6}, InitScheme::glorot_uniform, b));
  }
  SUBCASE("glorot bound and sample mean over 10^5 draws") {
    const std::size_t rows = 250, cols = 400;
    const Tensor w = init_param({rows, cols}, InitScheme::glorot_uniform, rng);
    const double s = std::sqrt(6.0 / (rows + cols));
    double sum = 0, sq = 0;
    for (double v : w.values()) {
      CHECK(std::abs(v) <= s);
      sum += v;
      sq += v * v;
    }
    const double n = static_cast<double>(w.size());
    // Uniform(-s, s): variance s^2 / 3.
    const double sigma_of_mean = s / std::sqrt(3.0) / std::sqrt(n);
    CHECK(std::abs(sum / n) < 3 * sigma_of_mean);
    CHECK(sq / n == doctest::Approx(s * s / 3).epsilon(0.02));
  }
}

TEST_CASE("param store") {
  Rng rng(1);
  ParamStore store;
  const ParamId w = store.add("w", {3, 2}, InitScheme::glorot_uniform, rng);
  const ParamId b = store.add("b", {3}, InitScheme::zeros, rng);
  CHECK(store.regularized(w));
  CHECK_FALSE(store.regularized(b));
  CHECK(store.id("b") == b);
  CHECK_FALSE(store.find("missing").has_value());
  CHECK_THROWS_AS(store.id("missing"), ContractError);
  CHECK_THROWS_AS(store.add("w", {1}, InitScheme::zeros, rng), ContractError);
}

TEST_CASE("rng is deterministic and index is in range") {
  Rng a(9), b(9);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  Rng r(10);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[r.index(7)];
  for (int c : counts) CHECK(std::abs(c - 10000) < 4 * std::sqrt(10000.0 * 6 / 7));
  CHECK(mix_seed(1, 2) != mix_seed(2, 1));
}
