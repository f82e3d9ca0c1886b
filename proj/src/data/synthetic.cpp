#include "data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "core/io.hpp"

namespace storygen::data {

using json = nlohmann::json;

namespace {

struct Background {
  std::string place;
  std::array<double, 3> color;
};

const std::vector<Background>& background_table() {
  static const std::vector<Background> table = {
      {"meadow", {0.13, 0.23, 0.11}},
      {"cave", {0.15, 0.14, 0.17}},
      {"shore", {0.10, 0.16, 0.25}},
      {"desert", {0.24, 0.20, 0.12}},
  };
  return table;
}

const std::vector<std::string>& verb_table() {
  static const std::vector<std::string> verbs = {"wave", "jump",  "dance", "sing",
                                                 "run",  "laugh", "rest",  "play"};
  return verbs;
}

const std::vector<std::string>& prep_table() {
  static const std::vector<std::string> preps = {"at", "near", "by", "in"};
  return preps;
}

bool glyph_hit(int glyph, int x, int y, int g) {
  const double c = (g - 1) / 2.0;
  const double dx = x - c, dy = y - c;
  const double r = g / 2.0;
  switch (glyph) {
    case 0: return dx * dx + dy * dy <= r * r;                          // disc
    case 1: return true;                                                // square
    case 2: return std::abs(dx) <= (y + 1) * 0.5;                       // triangle
    case 3: return std::abs(dx) + std::abs(dy) <= r;                    // diamond
    case 4: return std::abs(dx) <= g / 5.0 || std::abs(dy) <= g / 5.0;  // plus
    case 5: {                                                           // ring
      const double d2 = dx * dx + dy * dy;
      return d2 <= r * r && d2 >= (r * 0.55) * (r * 0.55);
    }
    case 6: return std::abs(std::abs(dx) - std::abs(dy)) <= g / 8.0;    // x
    case 7: return std::abs(dy) <= g / 5.0;                             // bar
    case 8: return std::abs(dx) <= g / 5.0;                             // pillar
    default: return false;
  }
}

std::string build_caption(const std::vector<std::string>& names, const std::string& verb,
                          const std::string& prep, const std::string& place) {
  std::ostringstream out;
  if (names.size() == 1) {
    out << names[0] << " " << verb << "s " << prep << " the " << place << ".";
  } else {
    for (size_t i = 0; i < names.size(); ++i) {
      if (i > 0) out << (i + 1 == names.size() ? " and " : ", ");
      out << names[i];
    }
    out << " " << verb << " " << prep << " the " << place << ".";
  }
  return out.str();
}

}  // namespace

CharacterSet default_characters(int n) {
  static const std::vector<std::pair<std::string, std::array<double, 3>>> defs = {
      {"alpha", {0.95, 0.25, 0.20}},   {"beta", {0.25, 0.55, 0.95}},
      {"gamma", {0.30, 0.85, 0.30}},   {"delta", {0.95, 0.80, 0.20}},
      {"epsilon", {0.80, 0.30, 0.90}}, {"zeta", {0.95, 0.55, 0.15}},
      {"eta", {0.25, 0.85, 0.85}},     {"theta", {0.95, 0.45, 0.70}},
      {"iota", {0.90, 0.90, 0.90}},
  };
  if (n < 1 || n > static_cast<int>(defs.size()))
    throw std::invalid_argument("default_characters: supported range is 1.." +
                                std::to_string(defs.size()));
  CharacterSet set;
  for (int i = 0; i < n; ++i)
    set.characters.push_back({defs[static_cast<size_t>(i)].first,
                              defs[static_cast<size_t>(i)].second, i});
  return set;
}

std::vector<StorySample> generate_stories(const SyntheticConfig& config, const CharacterSet& chars,
                                          const std::string& split, int count) {
  const int h = config.image_size;
  const int glyph_size = h / 4;
  // 3x3 home grid; offsets are multiples of the glyph size so glyphs sit
  // cleanly on coarse latent cells
  const int origin = h / 8;
  if (h < 16 || h % 8 != 0)
    throw std::invalid_argument("generate_stories: image size " + std::to_string(h) +
                                " too small to place characters (needs >= 16, multiple of 8)");
  if (config.n_backgrounds < 1 ||
      config.n_backgrounds > static_cast<int>(background_table().size()))
    throw std::invalid_argument("generate_stories: unsupported background count");

  RngStream split_rng = RngStream(config.seed).split("data").split(split);
  std::vector<StorySample> stories;
  stories.reserve(static_cast<size_t>(count));
  for (int s = 0; s < count; ++s) {
    RngStream rng = split_rng.fork(static_cast<uint64_t>(s));
    const auto& bg = background_table()[static_cast<size_t>(rng.uniform_int(config.n_backgrounds))];

    StorySample sample;
    {
      std::ostringstream id;
      id << split << "_" << std::setw(5) << std::setfill('0') << s;
      sample.story_id = id.str();
    }
    for (int f = 0; f < config.frames_per_story; ++f) {
      const int n_present = 1 + rng.uniform_int(config.max_chars_per_frame);
      std::vector<int> order(static_cast<size_t>(chars.count()));
      for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
      rng.shuffle(order);
      std::vector<int> present(order.begin(), order.begin() + n_present);
      std::sort(present.begin(), present.end());

      std::vector<std::string> names;
      for (int c : present) names.push_back(chars.characters[static_cast<size_t>(c)].name);
      const auto& verb = verb_table()[static_cast<size_t>(rng.uniform_int(
          static_cast<int>(verb_table().size())))];
      const auto& prep = prep_table()[static_cast<size_t>(rng.uniform_int(
          static_cast<int>(prep_table().size())))];
      sample.captions.push_back(build_caption(names, verb, prep, bg.place));

      Rgb8Image frame;
      frame.width = frame.height = h;
      frame.pixels.resize(static_cast<size_t>(3) * h * h);
      for (size_t i = 0; i < frame.pixels.size(); i += 3) {
        frame.pixels[i] = static_cast<uint8_t>(std::lround(bg.color[0] * 255.0));
        frame.pixels[i + 1] = static_cast<uint8_t>(std::lround(bg.color[1] * 255.0));
        frame.pixels[i + 2] = static_cast<uint8_t>(std::lround(bg.color[2] * 255.0));
      }
      for (int c : present) {
        const auto& def = chars.characters[static_cast<size_t>(c)];
        const int cx = origin + (c % 3) * glyph_size;
        const int cy = origin + (c / 3) * glyph_size;
        for (int y = 0; y < glyph_size; ++y)
          for (int x = 0; x < glyph_size; ++x) {
            if (!glyph_hit(def.glyph, x, y, glyph_size)) continue;
            const int px = cx + x, py = cy + y;
            if (px < 0 || px >= h || py < 0 || py >= h) continue;
            uint8_t* p = frame.pixels.data() + (static_cast<size_t>(py) * h + px) * 3;
            p[0] = static_cast<uint8_t>(std::lround(def.color[0] * 255.0));
            p[1] = static_cast<uint8_t>(std::lround(def.color[1] * 255.0));
            p[2] = static_cast<uint8_t>(std::lround(def.color[2] * 255.0));
          }
      }
      sample.frames.push_back(std::move(frame));
      sample.presence.push_back(character_presence(sample.captions.back(), chars));

      std::ostringstream rel;
      rel << "images/" << sample.story_id << "_f" << f << ".png";
      sample.image_paths.push_back(rel.str());
    }
    stories.push_back(std::move(sample));
  }
  return stories;
}

void generate_synthetic(const SyntheticConfig& config, const std::filesystem::path& out_root) {
  const CharacterSet chars = default_characters(config.n_characters);

  json meta;
  meta["image_size"] = config.image_size;
  meta["frames_per_story"] = config.frames_per_story;
  meta["seed"] = config.seed;
  json char_list = json::array();
  for (const auto& c : chars.characters) {
    json jc;
    jc["name"] = c.name;
    jc["color"] = {c.color[0], c.color[1], c.color[2]};
    jc["glyph"] = c.glyph;
    char_list.push_back(jc);
  }
  meta["characters"] = char_list;
  json bg_list = json::array();
  for (int i = 0; i < config.n_backgrounds; ++i) {
    const auto& bg = background_table()[static_cast<size_t>(i)];
    bg_list.push_back({{"place", bg.place}, {"color", {bg.color[0], bg.color[1], bg.color[2]}}});
  }
  meta["backgrounds"] = bg_list;
  ensure_directory(out_root);
  write_text_file(out_root / "meta.json", meta.dump(2) + "\n");

  const std::vector<std::pair<std::string, int>> splits = {
      {"train", config.train_stories}, {"val", config.val_stories}, {"test", config.test_stories}};
  for (const auto& [split, count] : splits) {
    auto stories = generate_stories(config, chars, split, count);
    const auto split_dir = out_root / split;
    ensure_directory(split_dir / "images");
    for (const auto& story : stories)
      for (size_t f = 0; f < story.frames.size(); ++f)
        write_png(split_dir / story.image_paths[f], story.frames[f]);
    write_manifest(split_dir / "manifest.jsonl", stories);
  }
}

}  // namespace storygen::data
