#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace storygen {

struct Rgb8Image {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // row-major RGB, 3 bytes per pixel
};

// 8-bit RGB, non-interlaced PNG. The encoder emits deterministic bytes for
// identical pixel input; the decoder handles all five scanline filters but
// only this pixel format.
std::vector<uint8_t> encode_png(const Rgb8Image& image);
Rgb8Image decode_png(const std::vector<uint8_t>& bytes);

void write_png(const std::filesystem::path& path, const Rgb8Image& image);
Rgb8Image read_png(const std::filesystem::path& path);

}  // namespace storygen
