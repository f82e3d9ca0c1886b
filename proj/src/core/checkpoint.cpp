#include "core/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace storygen {
namespace {

constexpr char kMagic[4] = {'S', 'G', 'C', 'P'};
constexpr uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts unsupported");

void write_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_u64(std::ostream& out, uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw std::runtime_error("checkpoint: truncated file");
  return v;
}

uint64_t read_u64(std::istream& in) {
  uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw std::runtime_error("checkpoint: truncated file");
  return v;
}

std::string read_string(std::istream& in) {
  uint32_t len = read_u32(in);
  if (len > (1u << 20)) throw std::runtime_error("checkpoint: corrupt string length");
  std::string s(len, '\0');
  if (len > 0 && !in.read(s.data(), len)) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

}  // namespace

const NamedArray& Checkpoint::array(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw std::runtime_error("checkpoint: missing array '" + name + "'");
}

bool Checkpoint::has_array(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return true;
  return false;
}

std::string Checkpoint::meta_or(const std::string& key, const std::string& fallback) const {
  auto it = meta.find(key);
  return it == meta.end() ? fallback : it->second;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open for writing: " + path.string());

  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_string(out, checkpoint.component);
  write_u32(out, static_cast<uint32_t>(checkpoint.meta.size()));
  for (const auto& [k, v] : checkpoint.meta) {
    write_string(out, k);
    write_string(out, v);
  }
  write_u32(out, static_cast<uint32_t>(checkpoint.arrays.size()));
  for (const auto& a : checkpoint.arrays) {
    write_string(out, a.name);
    write_u32(out, static_cast<uint32_t>(a.shape.size()));
    uint64_t count = 1;
    for (int d : a.shape) {
      if (d <= 0) throw std::runtime_error("checkpoint: non-positive dimension in '" + a.name + "'");
      write_u32(out, static_cast<uint32_t>(d));
      count *= static_cast<uint64_t>(d);
    }
    if (count != a.data.size())
      throw std::runtime_error("checkpoint: shape/data mismatch in '" + a.name + "'");
    write_u64(out, count);
    out.write(reinterpret_cast<const char*>(a.data.data()),
              static_cast<std::streamsize>(count * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open: " + path.string());

  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  uint32_t version = read_u32(in);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));

  Checkpoint ck;
  ck.component = read_string(in);
  uint32_t n_meta = read_u32(in);
  for (uint32_t i = 0; i < n_meta; ++i) {
    std::string k = read_string(in);
    ck.meta[k] = read_string(in);
  }
  uint32_t n_arrays = read_u32(in);
  ck.arrays.reserve(n_arrays);
  for (uint32_t i = 0; i < n_arrays; ++i) {
    NamedArray a;
    a.name = read_string(in);
    uint32_t ndim = read_u32(in);
    if (ndim > 8) throw std::runtime_error("checkpoint: corrupt rank in '" + a.name + "'");
    uint64_t count = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      uint32_t dim = read_u32(in);
      a.shape.push_back(static_cast<int>(dim));
      count *= dim;
    }
    uint64_t stored = read_u64(in);
    if (stored != count) throw std::runtime_error("checkpoint: corrupt count in '" + a.name + "'");
    a.data.resize(count);
    if (count > 0 && !in.read(reinterpret_cast<char*>(a.data.data()),
                              static_cast<std::streamsize>(count * sizeof(double))))
      throw std::runtime_error("checkpoint: truncated file");
    ck.arrays.push_back(std::move(a));
  }
  // strict end-of-file: trailing bytes mean corruption
  in.peek();
  if (!in.eof()) throw std::runtime_error("checkpoint: trailing bytes in " + path.string());
  return ck;
}

}  // namespace storygen
