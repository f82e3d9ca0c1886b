#include "core/png.hpp"

#include <zlib.h>

#include <cstring>
#include <stdexcept>

#include "core/io.hpp"

namespace storygen {
namespace {

void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

uint32_t read_u32_be(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

void append_chunk(std::vector<uint8_t>& out, const char type[4],
                  const std::vector<uint8_t>& payload) {
  put_u32_be(out, static_cast<uint32_t>(payload.size()));
  size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  uint32_t crc = static_cast<uint32_t>(
      crc32(0, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start)));
  put_u32_be(out, crc);
}

const uint8_t kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

std::vector<uint8_t> encode_png(const Rgb8Image& image) {
  if (image.width <= 0 || image.height <= 0)
    throw std::invalid_argument("encode_png: empty image");
  const size_t row_bytes = static_cast<size_t>(image.width) * 3;
  if (image.pixels.size() != row_bytes * static_cast<size_t>(image.height))
    throw std::invalid_argument("encode_png: pixel buffer size does not match dimensions");

  // filter type 0 prepended to every scanline
  std::vector<uint8_t> raw;
  raw.reserve((row_bytes + 1) * static_cast<size_t>(image.height));
  for (int y = 0; y < image.height; ++y) {
    raw.push_back(0);
    const uint8_t* row = image.pixels.data() + static_cast<size_t>(y) * row_bytes;
    raw.insert(raw.end(), row, row + row_bytes);
  }

  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("encode_png: deflate failed");
  compressed.resize(bound);

  std::vector<uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<uint32_t>(image.width));
  put_u32_be(ihdr, static_cast<uint32_t>(image.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type: truecolor
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter method
  ihdr.push_back(0);  // no interlace

  std::vector<uint8_t> out(kSignature, kSignature + 8);
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", compressed);
  append_chunk(out, "IEND", {});
  return out;
}

Rgb8Image decode_png(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0)
    throw std::runtime_error("decode_png: not a PNG file");

  int width = 0, height = 0;
  bool saw_ihdr = false;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  while (pos + 8 <= bytes.size()) {
    uint32_t len = read_u32_be(bytes.data() + pos);
    if (pos + 12 + len > bytes.size()) throw std::runtime_error("decode_png: truncated chunk");
    const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
    const uint8_t* payload = bytes.data() + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw std::runtime_error("decode_png: bad IHDR");
      width = static_cast<int>(read_u32_be(payload));
      height = static_cast<int>(read_u32_be(payload + 4));
      if (payload[8] != 8 || payload[9] != 2 || payload[12] != 0)
        throw std::runtime_error("decode_png: only 8-bit RGB non-interlaced supported");
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || width <= 0 || height <= 0)
    throw std::runtime_error("decode_png: missing or invalid IHDR");

  const size_t row_bytes = static_cast<size_t>(width) * 3;
  const size_t raw_size = (row_bytes + 1) * static_cast<size_t>(height);
  std::vector<uint8_t> raw(raw_size);
  uLongf raw_len = static_cast<uLongf>(raw_size);
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw_size)
    throw std::runtime_error("decode_png: inflate failed");

  Rgb8Image image;
  image.width = width;
  image.height = height;
  image.pixels.resize(row_bytes * static_cast<size_t>(height));
  const int bpp = 3;
  for (int y = 0; y < height; ++y) {
    const uint8_t filter = raw[static_cast<size_t>(y) * (row_bytes + 1)];
    const uint8_t* src = raw.data() + static_cast<size_t>(y) * (row_bytes + 1) + 1;
    uint8_t* cur = image.pixels.data() + static_cast<size_t>(y) * row_bytes;
    const uint8_t* up = y > 0 ? cur - row_bytes : nullptr;
    for (size_t x = 0; x < row_bytes; ++x) {
      const int left = x >= static_cast<size_t>(bpp) ? cur[x - bpp] : 0;
      const int above = up ? up[x] : 0;
      const int upleft = (up && x >= static_cast<size_t>(bpp)) ? up[x - bpp] : 0;
      int value = src[x];
      switch (filter) {
        case 0: break;
        case 1: value += left; break;
        case 2: value += above; break;
        case 3: value += (left + above) / 2; break;
        case 4: value += paeth(left, above, upleft); break;
        default: throw std::runtime_error("decode_png: unknown filter type");
      }
      cur[x] = static_cast<uint8_t>(value & 0xff);
    }
  }
  return image;
}

void write_png(const std::filesystem::path& path, const Rgb8Image& image) {
  auto bytes = encode_png(image);
  write_binary_file(path, bytes.data(), bytes.size());
}

Rgb8Image read_png(const std::filesystem::path& path) {
  return decode_png(read_binary_file(path));
}

}  // namespace storygen
