#include "dipole/persist.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dipole/error.hpp"

namespace dipole {

CheckpointPaths CheckpointPaths::from_prefix(const std::filesystem::path& prefix) {
  std::filesystem::path manifest = prefix, payload = prefix;
  manifest += ".json";
  payload += ".bin";
  return {manifest, payload};
}

namespace {

void put_f32(std::string& out, double value) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(value));
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

double get_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[b]) << (8 * b);
  return static_cast<double>(std::bit_cast<float>(bits));
}

}  // namespace

void save_model(const Model& model, const std::filesystem::path& prefix, const nlohmann::json& metadata) {
  const CheckpointPaths paths = CheckpointPaths::from_prefix(prefix);
  const ParamStore& params = model.params();
  nlohmann::json entries = nlohmann::json::array();
  std::string payload;
  for (ParamId i = 0; i < params.size(); ++i) {
    entries.push_back({{"name", params.name(i)}, {"shape", params.value(i).shape()}});
    for (double v : params.value(i).data()) put_f32(payload, v);
  }
  const nlohmann::json manifest{{"format", "dipole-model"},
                                {"format_version", kModelFormatVersion},
                                {"config", to_json(model.config())},
                                {"parameters", entries},
                                {"payload", paths.payload.filename().string()},
                                {"metadata", metadata}};
  std::ofstream m(paths.manifest, std::ios::binary);
  if (!m) throw DataError("cannot write model manifest " + paths.manifest.string());
  m << manifest.dump(2) << '\n';
  std::ofstream p(paths.payload, std::ios::binary);
  if (!p) throw DataError("cannot write model payload " + paths.payload.string());
  p.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!m || !p) throw DataError("write failed for checkpoint " + prefix.string());
}

LoadedModel load_model(const std::filesystem::path& prefix) {
  const CheckpointPaths paths = CheckpointPaths::from_prefix(prefix);
  std::ifstream m(paths.manifest);
  if (!m) throw DataError("cannot open model manifest " + paths.manifest.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(m);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(paths.manifest.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "dipole-model") {
    throw DataError(paths.manifest.string() + ": not a dipole model manifest");
  }
  if (manifest.value("format_version", 0) != kModelFormatVersion) {
    throw DataError(paths.manifest.string() + ": unsupported format version");
  }
  std::ifstream p(paths.payload, std::ios::binary);
  if (!p) throw DataError("cannot open model payload " + paths.payload.string());
  const std::string payload((std::istreambuf_iterator<char>(p)), std::istreambuf_iterator<char>());

  ParamStore params;
  std::size_t offset = 0;
  try {
    for (const auto& entry : manifest.at("parameters")) {
      const auto shape = entry.at("shape").get<Shape>();
      Tensor t(shape);
      if (offset + 4 * t.size() > payload.size()) {
        throw DataError(paths.payload.string() + ": payload shorter than manifest declares");
      }
      const auto* bytes = reinterpret_cast<const unsigned char*>(payload.data()) + offset;
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = get_f32(bytes + 4 * i);
      offset += 4 * t.size();
      const std::string name = entry.at("name").get<std::string>();
      // Regularization flags are restored by the Model constructor.
      params.add(name, std::move(t), false);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(paths.manifest.string() + ": " + e.what());
  }
  if (offset != payload.size()) {
    throw DataError(paths.payload.string() + ": payload longer than manifest declares");
  }
  ModelConfig config = model_config_from_json(manifest.at("config"));
  return {Model(std::move(config), std::move(params)), manifest.value("metadata", nlohmann::json::object())};
}

ParamStore round_to_float32(const ParamStore& params) {
  ParamStore out;
  for (ParamId i = 0; i < params.size(); ++i) {
    Tensor t = params.value(i);
    for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
    out.add(params.name(i), std::move(t), params.regularized(i));
  }
  return out;
}

}  // namespace dipole
