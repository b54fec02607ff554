#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "dipole/params.hpp"
#include "dipole/tape.hpp"

namespace dipole {

// Records a scalar objective on `tape` using parameters bound from `params`.
// Must be deterministic (no dropout).
using GraphBuilder = std::function<Var(Tape& tape, const ParamStore& params)>;

struct GradCheckEntry {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  // Coordinates whose perturbation came within 10*eps of a kink.
  std::size_t skipped = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;
  bool passed = false;

  double max_relative_error() const;
};

// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
// gradient is ~0 from dividing finite-difference noise by ~0.
inline constexpr double kGradCheckFloor = 1e-6;
double relative_error(double analytic, double numeric, double floor = kGradCheckFloor);

// Compares backward() against central differences (f(x+e) - f(x-e)) / 2e
// for every coordinate of every parameter.
GradCheckReport grad_check(const GraphBuilder& build, ParamStore& params, double eps = 1e-5,
                           double tolerance = 1e-4);

}  // namespace dipole
