#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dipole {

// Flat "key = value" text. '#' starts a comment line; blank lines are
// ignored. Keys are the long CLI flag names without the leading dashes.
class RunConfig {
 public:
  static RunConfig parse(std::istream& in, std::string_view source = "<stream>");
  static RunConfig load(const std::filesystem::path& path);

  void set(const std::string& key, std::string value);
  std::optional<std::string> get(const std::string& key) const;
  bool contains(const std::string& key) const { return entries_.count(key) != 0; }
  const std::map<std::string, std::string>& entries() const { return entries_; }

  // Throws ConfigError naming the first key not in `allowed`.
  void reject_unknown(const std::vector<std::string>& allowed, std::string_view command) const;

  // Sorted by key, one "key = value" per line.
  std::string to_string() const;
  void save(const std::filesystem::path& path) const;

  bool operator==(const RunConfig&) const = default;

 private:
  std::map<std::string, std::string> entries_;
};

// "<artifact>.run.cfg"
std::filesystem::path run_config_path(const std::filesystem::path& artifact);

}  // namespace dipole
