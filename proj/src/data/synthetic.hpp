#pragma once

#include <filesystem>

#include "data/story.hpp"

namespace storygen::data {

struct SyntheticConfig {
  int n_characters = 9;
  int image_size = 32;
  int n_backgrounds = 4;
  int frames_per_story = 5;
  int train_stories = 1000;
  int val_stories = 100;
  int test_stories = 200;
  int max_chars_per_frame = 3;
  uint64_t seed = 7;
};

// Up to nine named glyph characters with distinct colors and shapes.
CharacterSet default_characters(int n);

// Procedural story dataset: each frame renders exactly the characters named
// in its caption on a background held constant within the story. Seeded
// generation is byte-reproducible. Writes meta.json plus train/val/test
// splits (manifest.jsonl + PNG frames) under out_root.
void generate_synthetic(const SyntheticConfig& config, const std::filesystem::path& out_root);

// In-memory generation of one split (tests and calibration use this).
std::vector<StorySample> generate_stories(const SyntheticConfig& config, const CharacterSet& chars,
                                          const std::string& split, int count);

}  // namespace storygen::data
