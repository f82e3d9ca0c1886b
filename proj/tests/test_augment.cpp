#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <thread>

#include "augment/augment.hpp"
#include "core/io.hpp"
#include "data/synthetic.hpp"

using namespace storygen;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
  auto dir = fs::temp_directory_path() / "storygen_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// chat-completion test double running on a loopback port
class MockServer {
 public:
  explicit MockServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server_.Post("/v1/chat/completions", std::move(handler));
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockServer() {
    server_.stop();
    thread_.join();
  }
  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

std::string completion_body(const std::string& content) {
  nlohmann::json body;
  body["choices"] = nlohmann::json::array();
  body["choices"].push_back({{"message", {{"role", "assistant"}, {"content", content}}}});
  return body.dump();
}

aug::LlmEndpointConfig endpoint_for(const MockServer& server) {
  aug::LlmEndpointConfig config;
  config.base_url = server.base_url();
  config.api_key_env = "STORYGEN_TEST_KEY";
  config.max_retries = 3;
  return config;
}

struct KeyGuard {
  KeyGuard() { setenv("STORYGEN_TEST_KEY", "sk-test-0000", 1); }
  ~KeyGuard() { unsetenv("STORYGEN_TEST_KEY"); }
};

aug::HttpAugmenter::Sleeper no_sleep() {
  return [](double) {};
}

data::Dataset small_dataset() {
  data::SyntheticConfig config;
  config.seed = 77;
  data::Dataset ds;
  ds.characters = data::default_characters(9);
  ds.image_size = config.image_size;
  ds.frames_per_story = config.frames_per_story;
  ds.stories = data::generate_stories(config, ds.characters, "train", 6);
  return ds;
}

}  // namespace

TEST_CASE("prompt numbering covers every caption in order") {
  auto chars = data::default_characters(3);
  auto prompt = aug::build_prompt({"alpha waves.", "beta jumps.", "gamma rests.", "alpha sings.",
                                   "beta plays."},
                                  chars);
  CHECK(prompt.user_message ==
        "1.alpha waves.\n2.beta jumps.\n3.gamma rests.\n4.alpha sings.\n5.beta plays.");
  CHECK(prompt.system_message.find("alpha") != std::string::npos);
  CHECK(prompt.system_message.find("caption augmentation assistant") != std::string::npos);

  auto single = aug::build_prompt({"alpha waves."}, chars);
  CHECK(single.user_message == "1.alpha waves.");

  // pure function of its inputs
  auto again = aug::build_prompt({"alpha waves."}, chars);
  CHECK(again.system_message == single.system_message);
  CHECK(again.user_message == single.user_message);

  CHECK_THROWS_AS(aug::build_prompt({}, chars), std::invalid_argument);
  CHECK_THROWS_AS(aug::build_prompt({"ok", ""}, chars), std::invalid_argument);
}

TEST_CASE("numbered responses parse with prose tolerance") {
  CHECK(aug::parse_numbered_response("1. foo\n2. bar", 2) ==
        std::vector<std::string>{"foo", "bar"});
  CHECK(aug::parse_numbered_response("1.compact\n2.form", 2) ==
        std::vector<std::string>{"compact", "form"});
  // leading prose and reordering are tolerated
  CHECK(aug::parse_numbered_response(
            "Sure! Here are the alternatives:\n2. second\n1. first\nHope this helps!", 2) ==
        std::vector<std::string>{"first", "second"});

  try {
    aug::parse_numbered_response("1. a\n2. b\n4. d\n5. e", 5);
    FAIL("expected a parse error");
  } catch (const aug::AugmentError& e) {
    CHECK(e.kind() == aug::AugmentError::Kind::parse);
    CHECK(e.raw().find("4. d") != std::string::npos);  // raw text kept for audit
  }

  CHECK_THROWS_AS(aug::parse_numbered_response("1. a\n1. again", 1), aug::AugmentError);
}

TEST_CASE("missing API key is a configuration error before any network call") {
  unsetenv("STORYGEN_TEST_KEY");
  aug::LlmEndpointConfig config;
  config.base_url = "http://127.0.0.1:1/v1";  // nothing listens; must not matter
  config.api_key_env = "STORYGEN_TEST_KEY";
  try {
    aug::HttpAugmenter augmenter(config, no_sleep());
    FAIL("expected a config error");
  } catch (const aug::AugmentError& e) {
    CHECK(e.kind() == aug::AugmentError::Kind::config);
  }
}

TEST_CASE("mock server body is returned verbatim") {
  KeyGuard key;
  MockServer server([](const httplib::Request& req, httplib::Response& res) {
    auto body = nlohmann::json::parse(req.body);
    CHECK(body.at("messages").size() == 2);
    CHECK(req.get_header_value("Authorization") == "Bearer sk-test-0000");
    res.set_content(completion_body("1. alpha happily waves."), "application/json");
  });
  aug::HttpAugmenter augmenter(endpoint_for(server), no_sleep());
  auto prompt = aug::build_prompt({"alpha waves."}, data::default_characters(2));
  CHECK(augmenter.request_augmentations(prompt) == "1. alpha happily waves.");
}

TEST_CASE("two failures then success within the retry budget") {
  KeyGuard key;
  std::atomic<int> calls{0};
  MockServer server([&](const httplib::Request&, httplib::Response& res) {
    const int call = ++calls;
    if (call <= 2) {
      res.status = 500;
      res.set_content("overloaded", "text/plain");
      return;
    }
    res.set_content(completion_body("1. recovered"), "application/json");
  });
  aug::HttpAugmenter augmenter(endpoint_for(server), no_sleep());
  auto prompt = aug::build_prompt({"alpha waves."}, data::default_characters(2));
  CHECK(augmenter.request_augmentations(prompt) == "1. recovered");
  CHECK(calls.load() == 3);
}

TEST_CASE("authentication failures are typed and not retried") {
  KeyGuard key;
  std::atomic<int> calls{0};
  MockServer server([&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 401;
  });
  aug::HttpAugmenter augmenter(endpoint_for(server), no_sleep());
  auto prompt = aug::build_prompt({"alpha waves."}, data::default_characters(2));
  try {
    augmenter.request_augmentations(prompt);
    FAIL("expected an auth error");
  } catch (const aug::AugmentError& e) {
    CHECK(e.kind() == aug::AugmentError::Kind::auth);
  }
  CHECK(calls.load() == 1);
}

TEST_CASE("a malformed response triggers exactly one corrective retry") {
  KeyGuard key;
  std::atomic<int> calls{0};
  MockServer server([&](const httplib::Request& req, httplib::Response& res) {
    const int call = ++calls;
    auto body = nlohmann::json::parse(req.body);
    const std::string user = body.at("messages").at(1).at("content");
    if (call == 1) {
      CHECK(user.find("formatted as") == std::string::npos);
      res.set_content(completion_body("here you go, no numbering"), "application/json");
    } else {
      CHECK(user.find("formatted as") != std::string::npos);  // corrective instruction present
      res.set_content(completion_body("1. fixed caption"), "application/json");
    }
  });
  aug::HttpAugmenter augmenter(endpoint_for(server), no_sleep());
  auto result = augmenter.augment_story({"alpha waves."}, data::default_characters(2), "s0");
  CHECK(result == std::vector<std::string>{"fixed caption"});
  CHECK(calls.load() == 2);
}

TEST_CASE("template augmenter preserves character mentions and changes wording") {
  auto ds = small_dataset();
  aug::TemplateAugmenter augmenter;
  for (const auto& story : ds.stories) {
    auto alternatives = augmenter.augment_story(story.captions, ds.characters, story.story_id);
    REQUIRE(alternatives.size() == story.captions.size());
    for (size_t f = 0; f < alternatives.size(); ++f) {
      CHECK(alternatives[f] != story.captions[f]);
      CHECK(data::character_presence(alternatives[f], ds.characters) ==
            data::character_presence(story.captions[f], ds.characters));
    }
    // deterministic
    CHECK(augmenter.augment_story(story.captions, ds.characters, story.story_id) == alternatives);
  }
}

TEST_CASE("fixture augmenter replays canned responses") {
  auto dir = temp_dir("fixtures");
  write_text_file(dir / "s0.txt", "1. alt one\n2. alt two\n");
  aug::FixtureAugmenter augmenter(dir);
  CHECK(augmenter.augment_story({"one", "two"}, data::default_characters(2), "s0") ==
        std::vector<std::string>{"alt one", "alt two"});
  CHECK_THROWS_AS(augmenter.augment_story({"one"}, data::default_characters(2), "missing"),
                  aug::AugmentError);
}

TEST_CASE("offline run produces a complete duplicate-free resumable sidecar") {
  auto dir = temp_dir("sidecar_run");
  auto ds = small_dataset();
  aug::TemplateAugmenter augmenter;

  auto stats = aug::run_augmentation(ds, augmenter, dir / "aug.jsonl");
  CHECK(stats.stories_total == 6);
  CHECK(stats.augmented == 6);
  CHECK(stats.failed == 0);
  CHECK(stats.coverage == doctest::Approx(1.0));

  // sidecar loads cleanly (duplicate-free) and covers every frame
  auto records = data::load_sidecar(dir / "aug.jsonl");
  CHECK(records.size() == 30);
  data::attach_sidecar(ds, dir / "aug.jsonl");
  for (const auto& story : ds.stories)
    for (int f = 0; f < 5; ++f) CHECK(story.has_aug(f));

  // resumability: a second run adds nothing
  const auto size_before = fs::file_size(dir / "aug.jsonl");
  auto stats2 = aug::run_augmentation(ds, augmenter, dir / "aug.jsonl");
  CHECK(stats2.skipped_existing == 6);
  CHECK(stats2.augmented == 0);
  CHECK(fs::file_size(dir / "aug.jsonl") == size_before);
}

TEST_CASE("failed stories are skipped without blocking the run") {
  auto dir = temp_dir("sidecar_partial");
  auto ds = small_dataset();
  // canned responses for all but one story
  auto fixture_dir = temp_dir("sidecar_partial_fixtures");
  for (size_t s = 0; s + 1 < ds.stories.size(); ++s) {
    std::string body;
    for (int f = 0; f < 5; ++f)
      body += std::to_string(f + 1) + ". rewritten caption " + std::to_string(f) + "\n";
    write_text_file(fixture_dir / (ds.stories[s].story_id + ".txt"), body);
  }
  aug::FixtureAugmenter augmenter(fixture_dir);
  auto stats = aug::run_augmentation(ds, augmenter, dir / "aug.jsonl");
  CHECK(stats.augmented == 5);
  CHECK(stats.failed == 1);
  CHECK(stats.coverage == doctest::Approx(5.0 / 6.0));
}
