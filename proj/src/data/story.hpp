#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "core/png.hpp"
#include "core/rng.hpp"

namespace storygen::data {

struct CharacterDef {
  std::string name;
  std::array<double, 3> color{};
  int glyph = 0;
};

struct CharacterSet {
  std::vector<CharacterDef> characters;
  int count() const { return static_cast<int>(characters.size()); }
};

struct StorySample {
  std::string story_id;
  std::vector<std::string> captions;
  std::vector<std::string> image_paths;  // relative to the manifest directory
  std::vector<Rgb8Image> frames;
  // one entry per frame when a sidecar is attached; empty string = no
  // augmented caption for that frame
  std::vector<std::string> aug_captions;
  std::vector<std::vector<uint8_t>> presence;  // frames x characters

  bool has_aug(int frame) const {
    return frame < static_cast<int>(aug_captions.size()) &&
           !aug_captions[static_cast<size_t>(frame)].empty();
  }
};

struct Dataset {
  CharacterSet characters;
  int image_size = 0;
  int frames_per_story = 5;
  std::vector<StorySample> stories;
};

// bit c set iff character c's name occurs as a whole word, case-insensitively
std::vector<uint8_t> character_presence(const std::string& caption, const CharacterSet& characters);

// Training-time caption choice: original or augmented with equal probability
// when an augmented caption exists, otherwise always the original.
const std::string& pick_caption(const StorySample& sample, int frame, RngStream& rng);

// dataset directory layout: <root>/meta.json + <root>/<split>/manifest.jsonl
Dataset load_dataset(const std::filesystem::path& root, const std::string& split);
CharacterSet load_character_set(const std::filesystem::path& root);

// line-delimited UTF-8 records {story_id, captions[n], images[n]}
std::vector<StorySample> load_manifest(const std::filesystem::path& manifest_path,
                                       const CharacterSet& characters, int frames_per_story);
void write_manifest(const std::filesystem::path& manifest_path,
                    const std::vector<StorySample>& stories);

// sidecar records {story_id, frame_index, text}; duplicate keys are an error
void attach_sidecar(Dataset& dataset, const std::filesystem::path& sidecar_path);
std::map<std::pair<std::string, int>, std::string> load_sidecar(
    const std::filesystem::path& sidecar_path);

// planar [0,1] float image (channels, H, W) from an 8-bit frame
std::vector<double> frame_to_chw(const Rgb8Image& frame);
Rgb8Image chw_to_frame(const std::vector<double>& chw, int size);

}  // namespace storygen::data
