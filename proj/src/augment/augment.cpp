#include "augment/augment.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "core/io.hpp"

namespace storygen::aug {

using json = nlohmann::json;

namespace {

const char* glyph_word(int glyph) {
  switch (glyph) {
    case 0: return "disc";
    case 1: return "square";
    case 2: return "triangle";
    case 3: return "diamond";
    case 4: return "plus sign";
    case 5: return "ring";
    case 6: return "cross";
    case 7: return "bar";
    case 8: return "pillar";
    default: return "shape";
  }
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

AugmentPrompt build_prompt(const std::vector<std::string>& captions,
                           const data::CharacterSet& characters) {
  if (captions.empty()) throw std::invalid_argument("build_prompt: no captions given");
  for (size_t i = 0; i < captions.size(); ++i)
    if (captions[i].empty())
      throw std::invalid_argument("build_prompt: caption " + std::to_string(i + 1) + " is empty");

  std::ostringstream system;
  system << "You are a caption augmentation assistant for a picture-story dataset. "
         << "Given numbered story captions, respond with one alternative phrasing per "
         << "caption, numbered the same way, one per line. Keep every character name "
         << "unchanged, mention exactly the same characters, and keep the meaning intact.\n"
         << "The recurring characters are:\n";
  for (const auto& c : characters.characters)
    system << "- " << c.name << ": drawn as a " << glyph_word(c.glyph) << "\n";

  std::ostringstream user;
  for (size_t i = 0; i < captions.size(); ++i)
    user << (i + 1) << "." << captions[i] << (i + 1 < captions.size() ? "\n" : "");

  return {system.str(), user.str()};
}

std::vector<std::string> parse_numbered_response(const std::string& text, int n) {
  std::map<int, std::string> found;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    size_t pos = 0;
    while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
    size_t digits = pos;
    while (digits < line.size() && std::isdigit(static_cast<unsigned char>(line[digits]))) ++digits;
    if (digits == pos || digits >= line.size() || line[digits] != '.') continue;
    const int index = std::stoi(line.substr(pos, digits - pos));
    if (index < 1 || index > n) continue;
    std::string content = line.substr(digits + 1);
    size_t b = content.find_first_not_of(" \t");
    content = b == std::string::npos ? "" : content.substr(b);
    while (!content.empty() && (content.back() == '\r' || content.back() == ' '))
      content.pop_back();
    if (content.empty()) continue;
    if (found.count(index))
      throw AugmentError(AugmentError::Kind::parse,
                         "parse_numbered_response: duplicate index " + std::to_string(index), text);
    found[index] = content;
  }
  std::vector<std::string> out;
  for (int i = 1; i <= n; ++i) {
    auto it = found.find(i);
    if (it == found.end())
      throw AugmentError(AugmentError::Kind::parse,
                         "parse_numbered_response: missing caption " + std::to_string(i) + " of " +
                             std::to_string(n),
                         text);
    out.push_back(it->second);
  }
  return out;
}

HttpAugmenter::HttpAugmenter(LlmEndpointConfig config, Sleeper sleeper)
    : config_(std::move(config)), sleeper_(std::move(sleeper)) {
  if (config_.base_url.empty())
    throw AugmentError(AugmentError::Kind::config, "augment: endpoint base URL not configured");
  const char* key = std::getenv(config_.api_key_env.c_str());
  if (!key || !*key)
    throw AugmentError(AugmentError::Kind::config,
                       "augment: API key environment variable '" + config_.api_key_env +
                           "' is not set");
  api_key_ = key;

  // split scheme://host[:port] from the optional path prefix
  size_t scheme = config_.base_url.find("://");
  size_t path_start = scheme == std::string::npos
                          ? config_.base_url.find('/')
                          : config_.base_url.find('/', scheme + 3);
  if (path_start == std::string::npos) {
    host_part_ = config_.base_url;
  } else {
    host_part_ = config_.base_url.substr(0, path_start);
    path_prefix_ = config_.base_url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  }
  if (!sleeper_) sleeper_ = [](double seconds) {
    std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
  };
}

std::string HttpAugmenter::request_augmentations(const AugmentPrompt& prompt) {
  json body;
  body["model"] = config_.model;
  body["temperature"] = config_.temperature;
  body["messages"] = json::array({{{"role", "system"}, {"content", prompt.system_message}},
                                  {{"role", "user"}, {"content", prompt.user_message}}});
  const std::string payload = body.dump();
  const std::string path = path_prefix_ + "/chat/completions";

  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) sleeper_(0.25 * static_cast<double>(1 << (attempt - 1)));
    httplib::Client client(host_part_);
    client.set_connection_timeout(std::chrono::duration<double>(config_.timeout_seconds));
    client.set_read_timeout(std::chrono::duration<double>(config_.timeout_seconds));
    httplib::Headers headers = {{"Authorization", "Bearer " + api_key_}};
    auto res = client.Post(path, headers, payload, "application/json");
    if (!res) {
      last_error = "network error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 401 || res->status == 403)
      throw AugmentError(AugmentError::Kind::auth,
                         "augment: authentication rejected (HTTP " +
                             std::to_string(res->status) + ")");
    if (res->status < 200 || res->status >= 300) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    try {
      json parsed = json::parse(res->body);
      return parsed.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
      throw AugmentError(AugmentError::Kind::parse,
                         std::string("augment: malformed completion body: ") + e.what(), res->body);
    }
  }
  throw AugmentError(AugmentError::Kind::network,
                     "augment: request failed after " + std::to_string(config_.max_retries + 1) +
                         " attempts (" + last_error + ")");
}

std::vector<std::string> HttpAugmenter::augment_story(const std::vector<std::string>& captions,
                                                      const data::CharacterSet& characters,
                                                      const std::string&) {
  AugmentPrompt prompt = build_prompt(captions, characters);
  const int n = static_cast<int>(captions.size());
  try {
    return parse_numbered_response(request_augmentations(prompt), n);
  } catch (const AugmentError& e) {
    if (e.kind() != AugmentError::Kind::parse) throw;
  }
  // one corrective round-trip before giving up on this story
  AugmentPrompt retry = prompt;
  retry.user_message += "\n\nRespond with exactly " + std::to_string(n) +
                        " lines, each formatted as \"<number>. <caption>\".";
  return parse_numbered_response(request_augmentations(retry), n);
}

std::vector<std::string> TemplateAugmenter::augment_story(
    const std::vector<std::string>& captions, const data::CharacterSet&,
    const std::string& story_id) {
  static const std::map<std::string, std::string> verb_map = {
      {"wave", "greet"},  {"jump", "hop"},   {"dance", "twirl"}, {"sing", "hum"},
      {"run", "dash"},    {"laugh", "giggle"}, {"rest", "relax"},  {"play", "frolic"},
      {"waves", "greets"}, {"jumps", "hops"}, {"dances", "twirls"}, {"sings", "hums"},
      {"runs", "dashes"}, {"laughs", "giggles"}, {"rests", "relaxes"}, {"plays", "frolics"}};
  static const std::map<std::string, std::string> prep_map = {
      {"at", "over at"}, {"near", "close to"}, {"by", "beside"}, {"in", "inside"}};
  static const std::vector<std::string> adverbs = {"happily", "quietly", "gladly", "calmly"};

  std::vector<std::string> out;
  for (size_t f = 0; f < captions.size(); ++f) {
    std::istringstream in(captions[f]);
    std::vector<std::string> words;
    std::string w;
    while (in >> w) words.push_back(w);

    const uint64_t h = fnv1a(story_id + "#" + std::to_string(f));
    std::ostringstream rebuilt;
    bool adverb_placed = false;
    for (size_t i = 0; i < words.size(); ++i) {
      std::string word = words[i];
      std::string trailing;
      while (!word.empty() && (word.back() == '.' || word.back() == ',')) {
        trailing.insert(trailing.begin(), word.back());
        word.pop_back();
      }
      auto verb_it = verb_map.find(word);
      auto prep_it = prep_map.find(word);
      std::string replacement = word;
      if (verb_it != verb_map.end()) {
        if (!adverb_placed) {
          rebuilt << adverbs[h % adverbs.size()] << " ";
          adverb_placed = true;
        }
        replacement = verb_it->second;
      } else if (prep_it != prep_map.end()) {
        replacement = prep_it->second;
      }
      rebuilt << replacement << trailing << (i + 1 < words.size() ? " " : "");
    }
    out.push_back(rebuilt.str());
  }
  return out;
}

std::vector<std::string> FixtureAugmenter::augment_story(const std::vector<std::string>& captions,
                                                         const data::CharacterSet&,
                                                         const std::string& story_id) {
  const auto path = dir_ / (story_id + ".txt");
  if (!std::filesystem::exists(path))
    throw AugmentError(AugmentError::Kind::config,
                       "augment fixture: missing canned response " + path.string());
  return parse_numbered_response(read_text_file(path), static_cast<int>(captions.size()));
}

AugmentRunStats run_augmentation(const data::Dataset& dataset, Augmenter& augmenter,
                                 const std::filesystem::path& sidecar_path) {
  std::map<std::pair<std::string, int>, std::string> existing;
  if (std::filesystem::exists(sidecar_path)) existing = data::load_sidecar(sidecar_path);

  auto covered = [&](const data::StorySample& story) {
    for (int f = 0; f < static_cast<int>(story.captions.size()); ++f)
      if (!existing.count({story.story_id, f})) return false;
    return true;
  };

  if (sidecar_path.has_parent_path()) std::filesystem::create_directories(sidecar_path.parent_path());
  std::ofstream out(sidecar_path, std::ios::app);
  if (!out)
    throw std::runtime_error("run_augmentation: cannot open sidecar for writing: " +
                             sidecar_path.string());

  AugmentRunStats stats;
  stats.stories_total = static_cast<int>(dataset.stories.size());
  int fully_covered = 0;
  for (const auto& story : dataset.stories) {
    if (covered(story)) {
      ++stats.skipped_existing;
      ++fully_covered;
      continue;
    }
    try {
      auto alternatives = augmenter.augment_story(story.captions, dataset.characters,
                                                  story.story_id);
      if (alternatives.size() != story.captions.size())
        throw AugmentError(AugmentError::Kind::parse,
                           "run_augmentation: augmenter returned wrong caption count");
      for (size_t f = 0; f < alternatives.size(); ++f) {
        if (existing.count({story.story_id, static_cast<int>(f)})) continue;
        json record;
        record["story_id"] = story.story_id;
        record["frame_index"] = static_cast<int>(f);
        record["text"] = alternatives[f];
        out << record.dump() << "\n";
      }
      out.flush();
      ++stats.augmented;
      ++fully_covered;
    } catch (const AugmentError& e) {
      std::cerr << "augment: story " << story.story_id << " failed: " << e.what() << "\n";
      ++stats.failed;
    }
  }
  stats.coverage = stats.stories_total > 0
                       ? static_cast<double>(fully_covered) / stats.stories_total
                       : 1.0;
  return stats;
}

}  // namespace storygen::aug
