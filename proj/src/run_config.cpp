#include "dipole/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <sstream>

#include "dipole/error.hpp"

namespace dipole {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

}  // namespace

RunConfig RunConfig::parse(std::istream& in, std::string_view source) {
  RunConfig config;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto eq = text.find('=');
    const std::string where = std::string(source) + ":" + std::to_string(number) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value, got '" + text + "'");
    std::string key = trim(std::string_view(text).substr(0, eq));
    if (key.empty()) throw ConfigError(where + "empty key");
    if (config.contains(key)) throw ConfigError(where + "duplicate key '" + key + "'");
    config.entries_[key] = trim(std::string_view(text).substr(eq + 1));
  }
  return config;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse(in, path.string());
}

void RunConfig::set(const std::string& key, std::string value) {
  if (key.empty() || key.find_first_of("=\n#") != std::string::npos) {
    throw ConfigError("invalid config key '" + key + "'");
  }
  if (value.find('\n') != std::string::npos) throw ConfigError("config value for '" + key + "' spans lines");
  entries_[key] = std::move(value);
}

std::optional<std::string> RunConfig::get(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void RunConfig::reject_unknown(const std::vector<std::string>& allowed, std::string_view command) const {
  for (const auto& [key, value] : entries_) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown config key '" + key + "' for " + std::string(command));
    }
  }
}

std::string RunConfig::to_string() const {
  std::ostringstream out;
  for (const auto& [key, value] : entries_) out << key << " = " << value << '\n';
  return out.str();
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write config file " + path.string());
  out << to_string();
}

std::filesystem::path run_config_path(const std::filesystem::path& artifact) {
  return std::filesystem::path(artifact.string() + ".run.cfg");
}

}  // namespace dipole
