#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace storygen {

// Flat key=value configuration with [section] headers. Keys are stored as
// "section.key"; values set later (e.g. CLI overrides) win over file values.
class Config {
 public:
  Config() = default;

  static Config from_file(const std::filesystem::path& path);
  static Config from_string(const std::string& text);

  // "section.key=value" or "key=value" (top-level)
  void set_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  double get_real(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Deterministic key-sorted serialization, written next to run outputs.
  std::string resolved_snapshot() const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace storygen
