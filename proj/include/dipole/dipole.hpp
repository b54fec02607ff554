#pragma once

#include "dipole/attention.hpp"
#include "dipole/diagnostics.hpp"
#include "dipole/ehr_data.hpp"
#include "dipole/error.hpp"
#include "dipole/gradcheck.hpp"
#include "dipole/interpret.hpp"
#include "dipole/metrics.hpp"
#include "dipole/model.hpp"
#include "dipole/ops.hpp"
#include "dipole/params.hpp"
#include "dipole/persist.hpp"
#include "dipole/recurrent.hpp"
#include "dipole/rng.hpp"
#include "dipole/synth.hpp"
#include "dipole/tape.hpp"
#include "dipole/tensor.hpp"
#include "dipole/train.hpp"
