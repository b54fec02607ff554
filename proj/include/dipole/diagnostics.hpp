#pragma once

#include <cstdint>

#include "dipole/ehr_data.hpp"
#include "dipole/gradcheck.hpp"
#include "dipole/model.hpp"

namespace dipole {

// |C| = 5 codes in |G| = 3 categories, m = p = 3, q = 2, r = 6, no dropout.
ModelConfig tiny_model_config(Variant variant, Causality causality = Causality::prefix);
Vocabulary tiny_vocabulary();
// Random patient over tiny_vocabulary() with `visits` visits.
PatientRecord tiny_patient(std::uint64_t seed, std::size_t visits = 4);

// Finite-difference check of the full objective (sequence loss + L2) of a
// freshly initialized tiny model on one T = 4 patient.
GradCheckReport check_model_gradients(Variant variant, Causality causality, std::uint64_t seed,
                                      double eps = 1e-5, double tolerance = 1e-4);

}  // namespace dipole
