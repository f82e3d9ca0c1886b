#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "bpe/bpe.hpp"
#include "core/io.hpp"

using namespace storygen;
using bpe::BpeVocab;

TEST_CASE("first merge on 'aaab' is the most frequent pair (a, a)") {
  // base symbols: "a", "b</w>"; pair (a,a) occurs twice, (a,b</w>) once
  BpeVocab vocab = BpeVocab::train({"aaab"}, 3);
  REQUIRE(vocab.merges().size() == 1);
  CHECK(vocab.merges()[0].first == "a");
  CHECK(vocab.merges()[0].second == "a");
}

TEST_CASE("empty corpus and undersized vocab are rejected") {
  CHECK_THROWS_AS(BpeVocab::train({}, 10), std::invalid_argument);
  CHECK_THROWS_AS(BpeVocab::train({"   "}, 10), std::invalid_argument);
  CHECK_THROWS_AS(BpeVocab::train({"aaab"}, 2), std::invalid_argument);
}

TEST_CASE("retraining on the same corpus reproduces the vocabulary") {
  std::vector<std::string> corpus = {"alpha waves at the meadow.", "beta and gamma dance.",
                                     "alpha and beta rest by the cave."};
  BpeVocab a = BpeVocab::train(corpus, 60);
  BpeVocab b = BpeVocab::train(corpus, 60);
  CHECK(a.merges() == b.merges());
  CHECK(a.total_vocab() == b.total_vocab());
  CHECK(a.encode_all("alpha and beta dance.") == b.encode_all("alpha and beta dance."));
}

TEST_CASE("round trip restores every corpus string up to normalization") {
  std::vector<std::string> corpus = {
      "alpha waves at the meadow.", "beta and gamma dance in the cave.",
      "delta, epsilon and zeta play by the shore.", "eta runs near the desert.",
      "theta and iota laugh at the meadow."};
  BpeVocab vocab = BpeVocab::train(corpus, 80);
  for (const auto& caption : corpus) {
    CHECK(vocab.decode(vocab.encode_all(caption)) == BpeVocab::normalize(caption));
  }
  // the synthetic corpus is already lowercase single-spaced: exact match
  CHECK(vocab.decode(vocab.encode_all(corpus[0])) == corpus[0]);
}

TEST_CASE("encode pads and truncates to the fixed length") {
  BpeVocab vocab = BpeVocab::train({"aa bb cc dd"}, 12);
  auto short_ids = vocab.encode("aa", 8);
  CHECK(short_ids.size() == 8);
  bool saw_pad = false;
  for (int id : short_ids) saw_pad = saw_pad || id == vocab.pad_id();
  CHECK(saw_pad);
  // padding only at the tail
  bool in_pad = false;
  for (int id : short_ids) {
    if (id == vocab.pad_id()) in_pad = true;
    else CHECK_FALSE(in_pad);
  }

  auto truncated = vocab.encode("aa bb cc dd aa bb cc dd aa bb cc dd", 4);
  CHECK(truncated.size() == 4);
  CHECK(vocab.encode("", 6) == std::vector<int>(6, vocab.pad_id()));
}

TEST_CASE("unknown symbols map to UNK and ids stay in range") {
  BpeVocab vocab = BpeVocab::train({"abc abd"}, 10);
  auto ids = vocab.encode_all("xyz");
  for (int id : ids) {
    CHECK(id < vocab.total_vocab());
    CHECK(id >= 0);
  }
  CHECK(ids[0] == vocab.unk_id());
  // specials are distinct and above the learned range
  CHECK(vocab.pad_id() == vocab.learned_count());
  CHECK(vocab.null_id() == vocab.learned_count() + 1);
  CHECK(vocab.unk_id() == vocab.learned_count() + 2);
}

TEST_CASE("save/load reproduces encodings") {
  auto dir = std::filesystem::temp_directory_path() / "storygen_tests" / "bpe";
  std::filesystem::create_directories(dir);
  std::vector<std::string> corpus = {"alpha waves at the meadow.", "beta dances by the cave."};
  BpeVocab vocab = BpeVocab::train(corpus, 50);
  vocab.save(dir / "vocab.txt");
  BpeVocab loaded = BpeVocab::load(dir / "vocab.txt");
  CHECK(loaded.total_vocab() == vocab.total_vocab());
  for (const auto& caption : corpus)
    CHECK(loaded.encode(caption, 24) == vocab.encode(caption, 24));
}

TEST_CASE("normalization lowercases and collapses whitespace") {
  CHECK(BpeVocab::normalize("  Alpha   WAVES\tnow ") == "alpha waves now");
}
