#include "data/story.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "core/io.hpp"

namespace storygen::data {

using json = nlohmann::json;

std::vector<uint8_t> character_presence(const std::string& caption,
                                        const CharacterSet& characters) {
  std::string lower;
  lower.reserve(caption.size());
  for (char c : caption) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));

  auto is_word_char = [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  };

  std::vector<uint8_t> bits(characters.characters.size(), 0);
  for (size_t c = 0; c < characters.characters.size(); ++c) {
    std::string name = characters.characters[c].name;
    std::transform(name.begin(), name.end(), name.begin(), ::tolower);
    size_t pos = 0;
    while ((pos = lower.find(name, pos)) != std::string::npos) {
      const bool left_ok = pos == 0 || !is_word_char(lower[pos - 1]);
      const size_t end = pos + name.size();
      const bool right_ok = end >= lower.size() || !is_word_char(lower[end]);
      if (left_ok && right_ok) {
        bits[c] = 1;
        break;
      }
      ++pos;
    }
  }
  return bits;
}

const std::string& pick_caption(const StorySample& sample, int frame, RngStream& rng) {
  if (frame < 0 || frame >= static_cast<int>(sample.captions.size()))
    throw std::out_of_range("pick_caption: frame index out of range");
  if (!sample.has_aug(frame)) return sample.captions[static_cast<size_t>(frame)];
  return rng.bernoulli(0.5) ? sample.captions[static_cast<size_t>(frame)]
                            : sample.aug_captions[static_cast<size_t>(frame)];
}

CharacterSet load_character_set(const std::filesystem::path& root) {
  json meta = json::parse(read_text_file(root / "meta.json"));
  CharacterSet set;
  for (const auto& c : meta.at("characters")) {
    CharacterDef def;
    def.name = c.at("name").get<std::string>();
    auto color = c.at("color");
    for (int i = 0; i < 3; ++i) def.color[static_cast<size_t>(i)] = color.at(i).get<double>();
    def.glyph = c.at("glyph").get<int>();
    set.characters.push_back(def);
  }
  return set;
}

std::vector<StorySample> load_manifest(const std::filesystem::path& manifest_path,
                                       const CharacterSet& characters, int frames_per_story) {
  std::istringstream in(read_text_file(manifest_path));
  const auto base_dir = manifest_path.parent_path();
  std::vector<StorySample> stories;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("manifest " + manifest_path.string() + " line " +
                               std::to_string(line_no) + ": invalid record: " + e.what());
    }
    StorySample sample;
    try {
      sample.story_id = record.at("story_id").get<std::string>();
      sample.captions = record.at("captions").get<std::vector<std::string>>();
      sample.image_paths = record.at("images").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw std::runtime_error("manifest " + manifest_path.string() + " line " +
                               std::to_string(line_no) + ": missing field: " + e.what());
    }
    if (static_cast<int>(sample.captions.size()) != frames_per_story ||
        static_cast<int>(sample.image_paths.size()) != frames_per_story)
      throw std::runtime_error(
          "manifest " + manifest_path.string() + " line " + std::to_string(line_no) + ": story '" +
          sample.story_id + "' must have exactly " + std::to_string(frames_per_story) +
          " captions and images, got " + std::to_string(sample.captions.size()) + " captions / " +
          std::to_string(sample.image_paths.size()) + " images");
    for (const auto& rel : sample.image_paths) {
      const auto path = base_dir / rel;
      if (!std::filesystem::exists(path))
        throw std::runtime_error("manifest " + manifest_path.string() + " line " +
                                 std::to_string(line_no) + ": missing image file " + path.string());
      sample.frames.push_back(read_png(path));
    }
    for (const auto& caption : sample.captions)
      sample.presence.push_back(character_presence(caption, characters));
    stories.push_back(std::move(sample));
  }
  return stories;
}

void write_manifest(const std::filesystem::path& manifest_path,
                    const std::vector<StorySample>& stories) {
  std::ostringstream out;
  for (const auto& s : stories) {
    json record;
    record["story_id"] = s.story_id;
    record["captions"] = s.captions;
    record["images"] = s.image_paths;
    out << record.dump() << "\n";
  }
  write_text_file(manifest_path, out.str());
}

Dataset load_dataset(const std::filesystem::path& root, const std::string& split) {
  json meta = json::parse(read_text_file(root / "meta.json"));
  Dataset ds;
  ds.characters = load_character_set(root);
  ds.image_size = meta.at("image_size").get<int>();
  ds.frames_per_story = meta.at("frames_per_story").get<int>();
  ds.stories = load_manifest(root / split / "manifest.jsonl", ds.characters, ds.frames_per_story);
  return ds;
}

std::map<std::pair<std::string, int>, std::string> load_sidecar(
    const std::filesystem::path& sidecar_path) {
  std::istringstream in(read_text_file(sidecar_path));
  std::map<std::pair<std::string, int>, std::string> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("sidecar " + sidecar_path.string() + " line " +
                               std::to_string(line_no) + ": invalid record: " + e.what());
    }
    const auto key = std::make_pair(record.at("story_id").get<std::string>(),
                                    record.at("frame_index").get<int>());
    if (records.count(key))
      throw std::runtime_error("sidecar " + sidecar_path.string() + " line " +
                               std::to_string(line_no) + ": duplicate record for story '" +
                               key.first + "' frame " + std::to_string(key.second));
    records[key] = record.at("text").get<std::string>();
  }
  return records;
}

void attach_sidecar(Dataset& dataset, const std::filesystem::path& sidecar_path) {
  auto records = load_sidecar(sidecar_path);
  for (auto& story : dataset.stories) {
    story.aug_captions.assign(static_cast<size_t>(dataset.frames_per_story), "");
    for (int f = 0; f < dataset.frames_per_story; ++f) {
      auto it = records.find({story.story_id, f});
      if (it != records.end()) story.aug_captions[static_cast<size_t>(f)] = it->second;
    }
  }
}

std::vector<double> frame_to_chw(const Rgb8Image& frame) {
  const int h = frame.height, w = frame.width;
  std::vector<double> out(static_cast<size_t>(3) * h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out[(static_cast<size_t>(c) * h + y) * w + x] =
            frame.pixels[(static_cast<size_t>(y) * w + x) * 3 + c] / 255.0;
  return out;
}

Rgb8Image chw_to_frame(const std::vector<double>& chw, int size) {
  if (chw.size() != static_cast<size_t>(3) * size * size)
    throw std::invalid_argument("chw_to_frame: buffer does not match size");
  Rgb8Image img;
  img.width = img.height = size;
  img.pixels.resize(static_cast<size_t>(3) * size * size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = chw[(static_cast<size_t>(c) * size + y) * size + x];
        v = std::clamp(v, 0.0, 1.0);
        img.pixels[(static_cast<size_t>(y) * size + x) * 3 + c] =
            static_cast<uint8_t>(std::lround(v * 255.0));
      }
  return img;
}

}  // namespace storygen::data
