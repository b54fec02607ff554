#include "dipole/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace dipole {

double GradCheckReport::max_relative_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_relative_error);
  return worst;
}

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

GradCheckReport grad_check(const GraphBuilder& build, ParamStore& params, double eps,
                           double tolerance) {
  Gradients analytic(params);
  {
    Tape tape;
    const Var loss = build(tape, params);
    tape.backward(loss, analytic);
  }
  const double kink_window = 10.0 * eps;
  auto evaluate = [&](bool& near_kink) {
    Tape tape;
    const double value = build(tape, params).value()[0];
    near_kink = near_kink || tape.min_kink_distance() < kink_window;
    return value;
  };

  GradCheckReport report;
  report.tolerance = tolerance;
  for (ParamId id = 0; id < params.size(); ++id) {
    GradCheckEntry entry{params.name(id)};
    Tensor& value = params.value(id);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double original = value[i];
      bool near_kink = false;
      value[i] = original + eps;
      const double plus = evaluate(near_kink);
      value[i] = original - eps;
      const double minus = evaluate(near_kink);
      value[i] = original;
      if (near_kink) {
        ++entry.skipped;
        continue;
      }
      const double numeric = (plus - minus) / (2.0 * eps);
      entry.max_relative_error =
          std::max(entry.max_relative_error, relative_error(analytic[id][i], numeric));
      ++entry.checked;
    }
    report.entries.push_back(std::move(entry));
  }
  report.passed = report.max_relative_error() < tolerance;
  return report;
}

}  // namespace dipole
