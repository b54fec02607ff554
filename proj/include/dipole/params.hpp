#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dipole/rng.hpp"
#include "dipole/tensor.hpp"

namespace dipole {

using ParamId = std::size_t;

enum class InitScheme {
  glorot_uniform,  // U(-s, s), s = sqrt(6 / (fan_in + fan_out))
  zeros,
};

// fan_in is the column count (input width), fan_out the row count; a
// vector of length n counts as fan_in = n, fan_out = 1.
Tensor init_param(const Shape& shape, InitScheme scheme, Rng& rng);

class ParamStore;

// Gradient accumulators aligned index-for-index with a ParamStore.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParamStore& store);

  Tensor& operator[](ParamId id) { return tensors_[id]; }
  const Tensor& operator[](ParamId id) const { return tensors_[id]; }
  std::size_t size() const { return tensors_.size(); }

  void zero();
  void merge(const Gradients& other);
  void push(const Shape& shape) { tensors_.emplace_back(shape); }

 private:
  std::vector<Tensor> tensors_;
};

// Named trainable parameters. Insertion order is the canonical order used
// by persistence and by every per-parameter loop.
class ParamStore {
 public:
  ParamId add(std::string name, Tensor value, bool regularized);
  ParamId add(std::string name, const Shape& shape, InitScheme scheme, Rng& rng);

  std::optional<ParamId> find(std::string_view name) const;
  ParamId id(std::string_view name) const;

  const Tensor& value(ParamId id) const { return entries_[id].value; }
  Tensor& value(ParamId id) { return entries_[id].value; }
  const std::string& name(ParamId id) const { return entries_[id].name; }
  // Weight matrices carry the L2 penalty; biases do not.
  bool regularized(ParamId id) const { return entries_[id].regularized; }
  std::size_t size() const { return entries_.size(); }

  Gradients& grads() { return grads_; }
  const Gradients& grads() const { return grads_; }
  void zero_grad() { grads_.zero(); }

 private:
  struct Entry {
    std::string name;
    Tensor value;
    bool regularized = false;
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, ParamId> index_;
  Gradients grads_;
};

}  // namespace dipole
