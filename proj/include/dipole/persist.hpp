#pragma once

#include <filesystem>

#include <json.hpp>

#include "dipole/model.hpp"

namespace dipole {

inline constexpr int kModelFormatVersion = 1;

// A checkpoint is two files next to each other:
//   <prefix>.json  manifest: format version, model config, parameter names
//                  and shapes in payload order, free-form metadata
//   <prefix>.bin   little-endian float32 values, row-major, concatenated in
//                  manifest order
struct CheckpointPaths {
  std::filesystem::path manifest;
  std::filesystem::path payload;

  static CheckpointPaths from_prefix(const std::filesystem::path& prefix);
};

struct LoadedModel {
  Model model;
  nlohmann::json metadata;
};

void save_model(const Model& model, const std::filesystem::path& prefix,
                const nlohmann::json& metadata = nlohmann::json::object());
LoadedModel load_model(const std::filesystem::path& prefix);

// Values as stored in a checkpoint (rounded through float32).
ParamStore round_to_float32(const ParamStore& params);

}  // namespace dipole
