#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dipole/dipole.hpp"

namespace dipole::testing {

inline Tensor random_tensor(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& x : t.data()) x = rng.uniform(lo, hi);
  return t;
}

inline Shape random_shape(Rng& rng, std::size_t rank, std::size_t max_extent = 8) {
  Shape shape;
  for (std::size_t i = 0; i < rank; ++i) shape.push_back(1 + rng.index(max_extent));
  return shape;
}

using OpFn = std::function<Var(std::span<const Var> inputs)>;

// Wraps `op` into a scalar objective by taking a fixed random weighted sum of
// its output, then checks it against central differences with the inputs
// treated as parameters.
inline GradCheckReport check_op(const std::vector<Tensor>& inputs, const OpFn& op, std::uint64_t seed,
                                double eps = 1e-5, double tol = 1e-4) {
  ParamStore store;
  for (std::size_t i = 0; i < inputs.size(); ++i) store.add("x" + std::to_string(i), inputs[i], false);
  Tensor weights;
  GraphBuilder build = [&](Tape& tape, const ParamStore& params) {
    std::vector<Var> vars;
    for (ParamId id = 0; id < params.size(); ++id) vars.push_back(tape.param(params, id));
    Var out = op(vars);
    if (weights.size() != out.value().size()) {
      Rng rng(mix_seed(seed, 99));
      weights = random_tensor(rng, out.value().shape(), 0.5, 1.5);
    }
    return reduce_sum(mul(out, tape.constant(weights)));
  };
  return grad_check(build, store, eps, tol);
}

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto base = std::filesystem::temp_directory_path();
    const std::uint64_t tag = mix_seed(reinterpret_cast<std::uintptr_t>(this),
                                       static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count()));
    path_ = base / ("dipole-test-" + std::to_string(tag % 1000000007ULL) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Small planted-rule corpus for end-to-end tests.
inline GeneratorConfig small_generator(std::uint64_t seed = 7) {
  GeneratorConfig g;
  g.n_patients = 60;
  g.vocab_size = 40;
  g.n_categories = 8;
  g.visits = {3, 12, 6.0};
  g.codes_per_visit = {1, 8, 3.0};
  g.n_rules = 3;
  g.dependency_lag = 2;
  g.dependency_strength = 0.9;
  g.seed = seed;
  return g;
}

}  // namespace dipole::testing
