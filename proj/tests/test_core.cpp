#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "ad/optim.hpp"
#include "core/checkpoint.hpp"
#include "core/config.hpp"
#include "core/io.hpp"
#include "core/png.hpp"
#include "core/rng.hpp"

using namespace storygen;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
  auto dir = fs::temp_directory_path() / "storygen_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("rng streams are deterministic and split-independent") {
  RngStream a(12345), b(12345);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  RngStream root(9);
  RngStream s1 = root.split("mask");
  RngStream s2 = root.split("mask");
  RngStream s3 = root.split("data");
  CHECK(s1.next_u64() == s2.next_u64());
  CHECK(s1.next_u64() != s3.next_u64());

  // consuming the parent does not shift derived streams
  RngStream root2(9);
  root2.next_u64();
  CHECK(root2.split("mask").next_u64() == root.split("mask").next_u64());
}

TEST_CASE("rng uniform_int stays in range and shuffle is a permutation") {
  RngStream rng(3);
  for (int i = 0; i < 1000; ++i) {
    int v = rng.uniform_int(7);
    CHECK(v >= 0);
    CHECK(v < 7);
  }
  std::vector<int> v = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  rng.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 10; ++i) CHECK(sorted[static_cast<size_t>(i)] == i);
}

TEST_CASE("config parses sections, types and overrides") {
  Config cfg = Config::from_string(
      "# comment\n"
      "top = 1\n"
      "[model]\n"
      "d = 64\n"
      "lr = 1e-3\n"
      "guidance = true\n");
  CHECK(cfg.get_int("top", 0) == 1);
  CHECK(cfg.get_int("model.d", 0) == 64);
  CHECK(cfg.get_real("model.lr", 0) == doctest::Approx(1e-3));
  CHECK(cfg.get_bool("model.guidance", false));
  CHECK(cfg.get_int("missing", 42) == 42);

  cfg.set_override("model.d=128");
  CHECK(cfg.get_int("model.d", 0) == 128);

  CHECK_THROWS_AS(cfg.get_int("model.lr", 0), std::runtime_error);
  CHECK_THROWS_AS(Config::from_string("novalue\n"), std::runtime_error);

  Config cfg2 = Config::from_string("b = 2\na = 1\n");
  CHECK(cfg2.resolved_snapshot() == "a = 1\nb = 2\n");
}

TEST_CASE("png encode/decode round trip is exact") {
  RngStream rng(77);
  Rgb8Image img;
  img.width = 13;
  img.height = 9;
  img.pixels.resize(static_cast<size_t>(13) * 9 * 3);
  for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(256));

  auto bytes = encode_png(img);
  Rgb8Image back = decode_png(bytes);
  CHECK(back.width == img.width);
  CHECK(back.height == img.height);
  CHECK(back.pixels == img.pixels);

  // deterministic bytes for identical input
  CHECK(encode_png(img) == bytes);
}

TEST_CASE("png decoder rejects garbage") {
  std::vector<uint8_t> junk = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  CHECK_THROWS_AS(decode_png(junk), std::runtime_error);
}

TEST_CASE("checkpoint round trip preserves arrays and metadata") {
  auto dir = temp_dir("checkpoint");
  Checkpoint ck;
  ck.component = "unit-test";
  ck.meta["alpha"] = "1";
  ck.arrays.push_back({"w", {2, 3}, {1, 2, 3, 4, 5, 6}});
  save_checkpoint(dir / "x.ckpt", ck);

  Checkpoint back = load_checkpoint(dir / "x.ckpt");
  CHECK(back.component == "unit-test");
  CHECK(back.meta.at("alpha") == "1");
  CHECK(back.array("w").shape == std::vector<int>{2, 3});
  CHECK(back.array("w").data == ck.arrays[0].data);
  CHECK_THROWS_AS(back.array("missing"), std::runtime_error);
}

TEST_CASE("truncated checkpoint fails without partial state") {
  auto dir = temp_dir("checkpoint_trunc");
  Checkpoint ck;
  ck.component = "unit-test";
  ck.arrays.push_back({"w", {64}, std::vector<double>(64, 1.5)});
  save_checkpoint(dir / "full.ckpt", ck);

  auto bytes = read_binary_file(dir / "full.ckpt");
  bytes.resize(bytes.size() / 2);
  write_binary_file(dir / "cut.ckpt", bytes.data(), bytes.size());
  CHECK_THROWS_AS(load_checkpoint(dir / "cut.ckpt"), std::runtime_error);

  bytes = read_binary_file(dir / "full.ckpt");
  bytes.push_back(0);
  write_binary_file(dir / "extra.ckpt", bytes.data(), bytes.size());
  CHECK_THROWS_AS(load_checkpoint(dir / "extra.ckpt"), std::runtime_error);
}

TEST_CASE("parameter store rejects checkpoints with mismatched shapes, naming the tensor") {
  ad::ParameterStore small;
  small.create("layer0.w", {4, 4});
  auto arrays = small.export_arrays();

  ad::ParameterStore big;
  big.create("layer0.w", {8, 8});
  CHECK_THROWS_WITH_AS(big.import_arrays(arrays),
                       "parameter store: shape mismatch for tensor 'layer0.w': checkpoint [4,4] "
                       "vs model [8,8]",
                       std::runtime_error);
}
