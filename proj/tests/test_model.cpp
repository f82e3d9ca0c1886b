#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "model/transformer.hpp"

using namespace storygen;
using ad::Tensor;
using model::ModelConfig;
using model::StoryTransformer;

namespace {

ModelConfig desk_config() {
  ModelConfig cfg;
  cfg.text_vocab = 120;
  return cfg;  // d=64, 2 full + 4 self, 8 heads, N=64, L=32, n_c=9, K=32
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d = 16;
  cfg.n_head = 4;
  cfg.n_full = 1;
  cfg.n_self = 1;
  cfg.k_visual = 8;
  cfg.visual_len = 9;
  cfg.caption_len = 6;
  cfg.n_chars = 3;
  cfg.n_frames = 2;
  cfg.ffn_mult = 2;
  cfg.text_vocab = 20;
  return cfg;
}

struct Fixture {
  ModelConfig cfg;
  StoryTransformer model;
  std::vector<int> grid;
  std::vector<int> caption;
  std::vector<uint8_t> presence;
  std::vector<std::vector<int>> story_captions;

  explicit Fixture(ModelConfig config, uint64_t seed = 99)
      : cfg(config), model(config, seed) {
    RngStream rng(314);
    grid.resize(static_cast<size_t>(cfg.visual_len));
    for (auto& g : grid) g = rng.uniform_int(cfg.k_visual);
    grid[0] = cfg.mask_token();
    caption.resize(static_cast<size_t>(cfg.caption_len));
    for (auto& c : caption) c = rng.uniform_int(cfg.text_vocab - 3);
    presence.assign(static_cast<size_t>(cfg.n_chars), 0);
    presence[0] = 1;
    for (int f = 0; f < cfg.n_frames; ++f) {
      std::vector<int> ids(static_cast<size_t>(cfg.caption_len));
      for (auto& c : ids) c = rng.uniform_int(cfg.text_vocab - 3);
      story_captions.push_back(ids);
    }
  }
};

}  // namespace

TEST_CASE("input sequence lengths follow the composition rule") {
  Fixture fx(desk_config());
  auto input = fx.model.build_input(fx.grid, fx.caption, &fx.presence);
  CHECK(input.seq.dim(0) == 64 + 32 + 9);  // N + L + n_c = 105
  CHECK(input.seq.dim(1) == 64);

  ModelConfig no_ce = desk_config();
  no_ce.char_embeddings = false;
  StoryTransformer plain(no_ce, 3);
  auto plain_input = plain.build_input(fx.grid, fx.caption, nullptr);
  CHECK(plain_input.seq.dim(0) == 64 + 32);
}

TEST_CASE("presence selects positive rows, absence negative rows") {
  Fixture fx(tiny_config());
  std::vector<uint8_t> all_ones(static_cast<size_t>(fx.cfg.n_chars), 1);
  auto input = fx.model.build_input(fx.grid, fx.caption, &all_ones);
  const auto& table = fx.model.parameters().get("char_embed").data();
  const int d = fx.cfg.d;
  const int base = fx.cfg.visual_len + fx.cfg.caption_len;
  for (int c = 0; c < fx.cfg.n_chars; ++c)
    for (int j = 0; j < d; ++j)
      CHECK(input.seq.data()[(static_cast<size_t>(base) + c) * d + j] ==
            table[static_cast<size_t>(2 * c) * d + j]);

  CHECK(StoryTransformer::char_embedding_ids({1, 0, 1}) == std::vector<int>{0, 3, 4});
}

TEST_CASE("presence length must match the character count") {
  Fixture fx(tiny_config());
  std::vector<uint8_t> wrong(static_cast<size_t>(fx.cfg.n_chars + 1), 1);
  CHECK_THROWS_AS(fx.model.build_input(fx.grid, fx.caption, &wrong), std::invalid_argument);
}

TEST_CASE("text drop replaces every text row with the NULL embedding") {
  Fixture fx(tiny_config());
  auto input = fx.model.build_input(fx.grid, fx.caption, &fx.presence);
  auto dropped = fx.model.apply_text_drop(input);
  CHECK(dropped.dropped);

  const int d = fx.cfg.d;
  const int null_id = fx.cfg.text_vocab - 2;
  const auto& table = fx.model.parameters().get("text_embed").data();
  for (int p = 0; p < fx.cfg.caption_len; ++p)
    for (int j = 0; j < d; ++j)
      CHECK(dropped.seq.data()[(static_cast<size_t>(fx.cfg.visual_len) + p) * d + j] ==
            table[static_cast<size_t>(null_id) * d + j]);

  // visual and CE rows untouched
  for (int p = 0; p < fx.cfg.visual_len; ++p)
    for (int j = 0; j < d; ++j)
      CHECK(dropped.seq.data()[static_cast<size_t>(p) * d + j] ==
            input.seq.data()[static_cast<size_t>(p) * d + j]);
  const int base = fx.cfg.visual_len + fx.cfg.caption_len;
  for (int p = base; p < fx.cfg.seq_len(); ++p)
    for (int j = 0; j < d; ++j)
      CHECK(dropped.seq.data()[static_cast<size_t>(p) * d + j] ==
            input.seq.data()[static_cast<size_t>(p) * d + j]);

  // idempotent
  auto dropped_twice = fx.model.apply_text_drop(dropped);
  CHECK(dropped_twice.seq.data() == dropped.seq.data());
}

TEST_CASE("forward produces one K-way logit row per input position") {
  Fixture fx(tiny_config());
  auto input = fx.model.build_input(fx.grid, fx.caption, &fx.presence);
  Tensor ctx = fx.model.build_context(fx.story_captions);
  Tensor logits = fx.model.forward_single(input, ctx);
  CHECK(logits.dim(0) == fx.cfg.seq_len());
  CHECK(logits.dim(1) == fx.cfg.k_visual);
}

TEST_CASE("context length is validated") {
  Fixture fx(tiny_config());
  auto bad = fx.story_captions;
  bad.pop_back();
  CHECK_THROWS_AS(fx.model.build_context(bad), std::invalid_argument);
}

TEST_CASE("same seed gives bit-identical parameters") {
  ModelConfig cfg = tiny_config();
  StoryTransformer a(cfg, 7), b(cfg, 7), c(cfg, 8);
  bool all_equal = true, any_differs = false;
  for (const auto& name : a.parameters().names()) {
    all_equal = all_equal && a.parameters().get(name).data() == b.parameters().get(name).data();
    any_differs = any_differs || a.parameters().get(name).data() != c.parameters().get(name).data();
  }
  CHECK(all_equal);
  CHECK(any_differs);
}

TEST_CASE("initial weights are finite and bounded by one in magnitude") {
  Fixture fx(desk_config());
  for (const auto& name : fx.model.parameters().names()) {
    // norm gains start at exactly 1; every random weight stays strictly below
    const bool is_gain = name.size() > 2 && name.substr(name.size() - 2) == ".g";
    for (double v : fx.model.parameters().get(name).data()) {
      CHECK(std::isfinite(v));
      if (is_gain)
        CHECK(std::abs(v) <= 1.0);
      else
        CHECK(std::abs(v) < 1.0);
    }
  }
}

TEST_CASE("parameter count matches the closed-form formula") {
  ModelConfig cfg = desk_config();
  StoryTransformer model(cfg, 123);
  CHECK(model.parameters().total_params() == cfg.expected_param_count());

  ModelConfig no_ce = tiny_config();
  no_ce.char_embeddings = false;
  StoryTransformer plain(no_ce, 123);
  CHECK(plain.parameters().total_params() == no_ce.expected_param_count());
}

TEST_CASE("forward is deterministic") {
  Fixture fx(tiny_config());
  auto input = fx.model.build_input(fx.grid, fx.caption, &fx.presence);
  Tensor ctx = fx.model.build_context(fx.story_captions);
  CHECK(fx.model.forward_single(input, ctx).data() ==
        fx.model.forward_single(input, ctx).data());
}

TEST_CASE("self-attention is unrestricted: any input position influences any logit") {
  Fixture fx(tiny_config());
  auto input = fx.model.build_input(fx.grid, fx.caption, &fx.presence);
  Tensor ctx = fx.model.build_context(fx.story_captions);
  Tensor base = fx.model.forward_single(input, ctx);

  // change the LAST visual token; logits at the FIRST position must move
  auto perturbed_grid = fx.grid;
  perturbed_grid[static_cast<size_t>(fx.cfg.visual_len - 1)] =
      (perturbed_grid[static_cast<size_t>(fx.cfg.visual_len - 1)] + 1) % fx.cfg.k_visual;
  auto perturbed = fx.model.build_input(perturbed_grid, fx.caption, &fx.presence);
  Tensor moved = fx.model.forward_single(perturbed, ctx);

  double diff = 0;
  for (int j = 0; j < fx.cfg.k_visual; ++j)
    diff = std::max(diff, std::abs(moved.data()[static_cast<size_t>(j)] -
                                   base.data()[static_cast<size_t>(j)]));
  CHECK(diff > 1e-9);
}

TEST_CASE("permuting context captions changes the logits") {
  Fixture fx(tiny_config());
  auto input = fx.model.build_input(fx.grid, fx.caption, &fx.presence);
  Tensor ctx = fx.model.build_context(fx.story_captions);
  auto swapped = fx.story_captions;
  std::swap(swapped[0], swapped[1]);
  Tensor ctx_swapped = fx.model.build_context(swapped);

  Tensor a = fx.model.forward_single(input, ctx);
  Tensor b = fx.model.forward_single(input, ctx_swapped);
  double diff = 0;
  for (size_t i = 0; i < a.data().size(); ++i)
    diff = std::max(diff, std::abs(a.data()[i] - b.data()[i]));
  CHECK(diff > 1e-9);
}

TEST_CASE("a model with no cross-attention layers is exactly context-invariant") {
  ModelConfig cfg = tiny_config();
  cfg.n_full = 0;
  cfg.n_self = 2;
  StoryTransformer model(cfg, 5);
  Fixture fx(tiny_config());  // inputs only

  auto input = model.build_input(fx.grid, fx.caption, &fx.presence);
  Tensor ctx_a = model.build_context(fx.story_captions);
  auto other = fx.story_captions;
  std::swap(other[0], other[1]);
  Tensor ctx_b = model.build_context(other);
  CHECK(model.forward_single(input, ctx_a).data() == model.forward_single(input, ctx_b).data());
}

TEST_CASE("backward through the full layer stack yields finite gradients") {
  Fixture fx(desk_config());
  auto input = fx.model.build_input(fx.grid, fx.caption, &fx.presence);
  Tensor ctx = fx.model.build_context(fx.story_captions);
  Tensor logits = fx.model.forward_single(input, ctx);
  std::vector<double> weights(logits.data().size());
  RngStream rng(1);
  for (auto& w : weights) w = rng.normal();
  ad::weighted_sum(logits, weights).backward();
  int with_grad = 0;
  for (const auto& name : fx.model.parameters().names()) {
    Tensor p = fx.model.parameters().get(name);
    if (!p.has_grad()) continue;
    ++with_grad;
    for (double g : p.grad()) CHECK(std::isfinite(g));
  }
  CHECK(with_grad > 40);
}

TEST_CASE("checkpoint round trip reproduces forward outputs bit-exactly") {
  auto dir = std::filesystem::temp_directory_path() / "storygen_tests" / "model_ckpt";
  std::filesystem::create_directories(dir);
  Fixture fx(tiny_config());
  fx.model.save(dir / "model.ckpt");
  StoryTransformer loaded = StoryTransformer::load(dir / "model.ckpt");

  auto input = fx.model.build_input(fx.grid, fx.caption, &fx.presence);
  Tensor ctx = fx.model.build_context(fx.story_captions);
  auto input2 = loaded.build_input(fx.grid, fx.caption, &fx.presence);
  Tensor ctx2 = loaded.build_context(fx.story_captions);
  CHECK(fx.model.forward_single(input, ctx).data() ==
        loaded.forward_single(input2, ctx2).data());
}

TEST_CASE("loading a checkpoint into a mismatched width fails naming the tensor") {
  auto dir = std::filesystem::temp_directory_path() / "storygen_tests" / "model_ckpt2";
  std::filesystem::create_directories(dir);
  ModelConfig small = tiny_config();
  StoryTransformer model(small, 1);
  model.save(dir / "d16.ckpt");

  // same architecture at d=32: import must reject on a named tensor
  Checkpoint ck = load_checkpoint(dir / "d16.ckpt");
  ModelConfig big = small;
  big.d = 32;
  big.n_head = 4;
  StoryTransformer wide(big, 1);
  try {
    wide.parameters().import_arrays(ck.arrays);
    FAIL("expected a shape mismatch");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("shape mismatch for tensor") != std::string::npos);
  }
}

TEST_CASE("config validation rejects bad geometry") {
  ModelConfig cfg = tiny_config();
  cfg.d = 15;  // not divisible by heads
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.n_full = 0;
  cfg.n_self = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.text_vocab = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
