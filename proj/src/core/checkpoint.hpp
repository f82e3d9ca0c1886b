#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace storygen {

struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<double> data;
};

// Versioned binary checkpoint shared by every trainable component:
// magic, format version, component name, string metadata, then named
// flat little-endian float64 arrays. Loading validates the full file
// before returning, so a truncated or mismatched file never yields
// partial state.
struct Checkpoint {
  std::string component;
  std::map<std::string, std::string> meta;
  std::vector<NamedArray> arrays;

  const NamedArray& array(const std::string& name) const;
  bool has_array(const std::string& name) const;
  std::string meta_or(const std::string& key, const std::string& fallback) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace storygen
