#pragma once

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "data/story.hpp"

namespace storygen::aug {

struct AugmentPrompt {
  std::string system_message;
  std::string user_message;  // "1.{s1}\n2.{s2}\n..." numbered captions
};

struct LlmEndpointConfig {
  std::string base_url;                             // e.g. http://127.0.0.1:8089/v1
  std::string model = "chat-default";
  std::string api_key_env = "STORYGEN_LLM_API_KEY"; // key read from env, never logged
  double timeout_seconds = 30.0;
  int max_retries = 3;
  double temperature = 0.7;
};

class AugmentError : public std::runtime_error {
 public:
  enum class Kind { config, auth, network, http, parse };
  AugmentError(Kind kind, const std::string& message, std::string raw = "")
      : std::runtime_error(message), kind_(kind), raw_(std::move(raw)) {}
  Kind kind() const { return kind_; }
  // offending payload kept for audit on parse failures
  const std::string& raw() const { return raw_; }

 private:
  Kind kind_;
  std::string raw_;
};

// Deterministic prompt construction: a role description plus a character
// dossier in the system message, numbered captions in the user message.
AugmentPrompt build_prompt(const std::vector<std::string>& captions,
                           const data::CharacterSet& characters);

// Extracts exactly n lines of the form "k. text" (k = 1..n, any order,
// surrounding prose ignored). Missing or duplicate indices raise a parse
// error carrying the raw response.
std::vector<std::string> parse_numbered_response(const std::string& text, int n);

class Augmenter {
 public:
  virtual ~Augmenter() = default;
  virtual std::vector<std::string> augment_story(const std::vector<std::string>& captions,
                                                 const data::CharacterSet& characters,
                                                 const std::string& story_id) = 0;
};

// Chat-completion HTTP client with exponential-backoff retries. A malformed
// response is retried once with a corrective instruction before counting as
// a failure.
class HttpAugmenter : public Augmenter {
 public:
  using Sleeper = std::function<void(double /*seconds*/)>;
  explicit HttpAugmenter(LlmEndpointConfig config, Sleeper sleeper = {});

  std::vector<std::string> augment_story(const std::vector<std::string>& captions,
                                         const data::CharacterSet& characters,
                                         const std::string& story_id) override;

  // single exchange incl. retry policy; returns the assistant message text
  std::string request_augmentations(const AugmentPrompt& prompt);

 private:
  LlmEndpointConfig config_;
  std::string api_key_;
  std::string host_part_;  // scheme://host[:port]
  std::string path_prefix_;
  Sleeper sleeper_;
};

// Offline rule-based paraphraser (synonyms + adverb insertion) that keeps
// every character name intact; used for keyless runs and deterministic tests.
class TemplateAugmenter : public Augmenter {
 public:
  std::vector<std::string> augment_story(const std::vector<std::string>& captions,
                                         const data::CharacterSet& characters,
                                         const std::string& story_id) override;
};

// Replays canned response files ("<story_id>.txt") from a fixture directory.
class FixtureAugmenter : public Augmenter {
 public:
  explicit FixtureAugmenter(std::filesystem::path dir) : dir_(std::move(dir)) {}
  std::vector<std::string> augment_story(const std::vector<std::string>& captions,
                                         const data::CharacterSet& characters,
                                         const std::string& story_id) override;

 private:
  std::filesystem::path dir_;
};

struct AugmentRunStats {
  int stories_total = 0;
  int augmented = 0;
  int skipped_existing = 0;
  int failed = 0;
  double coverage = 0.0;  // stories fully covered in the sidecar afterwards
};

// Resumable sidecar writer: stories already covered are skipped, failures
// are logged and skipped, every completed story is flushed before moving on.
AugmentRunStats run_augmentation(const data::Dataset& dataset, Augmenter& augmenter,
                                 const std::filesystem::path& sidecar_path);

}  // namespace storygen::aug
