#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace storygen {

std::string read_text_file(const std::filesystem::path& path);
std::vector<uint8_t> read_binary_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);
void write_binary_file(const std::filesystem::path& path, const void* data, size_t size);
void ensure_directory(const std::filesystem::path& dir);

}  // namespace storygen
