#include "dipole/params.hpp"

#include <cmath>

#include "dipole/error.hpp"

namespace dipole {

Tensor init_param(const Shape& shape, InitScheme scheme, Rng& rng) {
  Tensor t(shape);
  if (scheme == InitScheme::zeros) return t;
  const double fan_out = shape.size() == 2 ? static_cast<double>(shape[0]) : 1.0;
  const double fan_in = static_cast<double>(shape.size() == 2 ? shape[1] : shape[0]);
  const double s = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& v : t.data()) v = rng.uniform(-s, s);
  return t;
}

Gradients::Gradients(const ParamStore& store) {
  tensors_.reserve(store.size());
  for (ParamId i = 0; i < store.size(); ++i) tensors_.emplace_back(store.value(i).shape());
}

void Gradients::zero() {
  for (Tensor& t : tensors_) t.fill(0.0);
}

void Gradients::merge(const Gradients& other) {
  if (other.size() != size()) throw ContractError("Gradients::merge: size mismatch");
  for (std::size_t i = 0; i < tensors_.size(); ++i) tensors_[i].add_scaled(other.tensors_[i]);
}

ParamId ParamStore::add(std::string name, Tensor value, bool regularized) {
  if (index_.contains(name)) throw ContractError("ParamStore: duplicate parameter '" + name + "'");
  const ParamId id = entries_.size();
  index_.emplace(name, id);
  grads_.push(value.shape());
  entries_.push_back({std::move(name), std::move(value), regularized});
  return id;
}

ParamId ParamStore::add(std::string name, const Shape& shape, InitScheme scheme, Rng& rng) {
  return add(std::move(name), init_param(shape, scheme, rng), scheme != InitScheme::zeros);
}

std::optional<ParamId> ParamStore::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

ParamId ParamStore::id(std::string_view name) const {
  if (auto found = find(name)) return *found;
  throw ContractError("ParamStore: no parameter named '" + std::string(name) + "'");
}

}  // namespace dipole
