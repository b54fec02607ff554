#pragma once

#include <stdexcept>
#include <string>

namespace dipole {

// Shape mismatch between operands of a tensor op.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller violated an operation's precondition (e.g. backward from a non-scalar).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed corpus contents: bad syntax, unknown codes, out-of-range indices.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid or infeasible configuration values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Operation requested on a model variant that does not support it.
class UnsupportedVariant : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Training produced a non-finite objective.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dipole
