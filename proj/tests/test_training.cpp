#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "training/train.hpp"

using namespace storygen;
using ad::Tensor;

namespace {

model::ModelConfig tiny_config() {
  model::ModelConfig cfg;
  cfg.d = 8;
  cfg.n_head = 2;
  cfg.n_full = 1;
  cfg.n_self = 1;
  cfg.k_visual = 6;
  cfg.visual_len = 4;
  cfg.caption_len = 4;
  cfg.n_chars = 3;
  cfg.n_frames = 5;
  cfg.ffn_mult = 2;
  cfg.text_vocab = 12;
  return cfg;
}

// random dataset straight in token space; training mechanics do not care
// where grids came from
train::PreparedDataset random_prepared(const model::ModelConfig& cfg, int stories, uint64_t seed,
                                       bool with_aug = false) {
  RngStream rng(seed);
  train::PreparedDataset prepared;
  prepared.n_stories = stories;
  prepared.frames = cfg.n_frames;
  for (int s = 0; s < stories; ++s) {
    for (int f = 0; f < cfg.n_frames; ++f) {
      std::vector<int> grid(static_cast<size_t>(cfg.visual_len));
      for (auto& g : grid) g = rng.uniform_int(cfg.k_visual);
      prepared.grids.push_back(grid);
      std::vector<int> caption(static_cast<size_t>(cfg.caption_len));
      for (auto& c : caption) c = rng.uniform_int(cfg.text_vocab - 3);
      prepared.captions.push_back(caption);
      std::vector<uint8_t> presence(static_cast<size_t>(cfg.n_chars));
      for (auto& b : presence) b = rng.bernoulli(0.3) ? 1 : 0;
      prepared.presence.push_back(presence);
      if (with_aug) {
        std::vector<int> aug(static_cast<size_t>(cfg.caption_len));
        for (auto& c : aug) c = rng.uniform_int(cfg.text_vocab - 3);
        prepared.aug_captions.push_back(aug);
        prepared.aug_presence.push_back(presence);
      } else {
        prepared.aug_captions.emplace_back();
        prepared.aug_presence.emplace_back();
      }
    }
  }
  return prepared;
}

}  // namespace

TEST_CASE("mask schedule endpoints and monotonicity") {
  CHECK(train::mask_gamma(0.0) == 1.0);
  CHECK(train::mask_gamma(1.0) == 0.0);
  double prev = train::mask_gamma(0.0);
  for (int i = 1; i <= 1000; ++i) {
    const double g = train::mask_gamma(i / 1000.0);
    CHECK(g < prev);
    prev = g;
  }
  CHECK(train::mask_gamma(0.5) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
}

TEST_CASE("scheduled mask counts at the analytic points") {
  CHECK(train::scheduled_mask_count(0.0, 64) == 64);
  CHECK(train::scheduled_mask_count(0.5, 64) == static_cast<int>(std::ceil(64 * std::sqrt(0.5))));
  CHECK(train::scheduled_mask_count(1.0, 64) == 1);  // at least one position masked
}

TEST_CASE("sampled masks are unique positions with count in range") {
  RngStream rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + rng.uniform_int(96);
    auto mask = train::sample_mask(n, rng);
    CHECK(static_cast<int>(mask.bits.size()) == n);
    int set = 0;
    for (uint8_t b : mask.bits) set += b ? 1 : 0;
    CHECK(set == mask.count);
    CHECK(mask.count >= 1);
    CHECK(mask.count <= n);
  }
}

TEST_CASE("empirical mean mask fraction approaches 2/pi") {
  RngStream rng(123);
  const int n = 1024;
  double total = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    auto mask = train::sample_mask(n, rng);
    total += static_cast<double>(mask.count) / n;
  }
  const double mean = total / draws;
  CHECK(std::abs(mean - 2.0 / M_PI) < 0.01);
}

TEST_CASE("masked-token loss hits the closed forms") {
  const int batch = 1, s = 6, n = 4, k = 128;
  std::vector<int> targets = {3, 1, 0, 2};
  std::vector<uint8_t> bits = {1, 1, 0, 1};

  // uniform logits: loss is ln(K)
  Tensor uniform = Tensor::zeros({batch * s, k}, true);
  Tensor loss = train::mvtm_loss(uniform, batch, s, n, targets, bits);
  CHECK(loss.item() == doctest::Approx(std::log(128.0)).epsilon(1e-12));

  // near-one-hot logits on the targets: loss approaches zero
  Tensor hot = Tensor::zeros({batch * s, k});
  for (int p = 0; p < n; ++p)
    hot.mutable_data()[static_cast<size_t>(p) * k + targets[static_cast<size_t>(p)]] = 50.0;
  CHECK(train::mvtm_loss(hot, batch, s, n, targets, bits).item() < 1e-9);
}

TEST_CASE("unmasked and non-visual positions contribute exactly zero") {
  RngStream rng(9);
  const int batch = 2, s = 7, n = 4, k = 5;
  std::vector<int> targets(8);
  for (auto& t : targets) t = rng.uniform_int(k);
  std::vector<uint8_t> bits = {1, 0, 1, 0, 0, 1, 1, 0};

  Tensor logits = Tensor::zeros({batch * s, k}, true);
  for (auto& v : logits.mutable_data()) v = rng.normal();
  Tensor loss = train::mvtm_loss(logits, batch, s, n, targets, bits);
  const double base = loss.item();
  loss.backward();

  // gradient at unmasked visual rows and all text rows is exactly zero
  const auto& grad = logits.grad();
  for (int b = 0; b < batch; ++b)
    for (int p = 0; p < s; ++p) {
      const bool masked = p < n && bits[static_cast<size_t>(b * n + p)];
      for (int j = 0; j < k; ++j) {
        const double g = grad[(static_cast<size_t>(b) * s + p) * k + j];
        if (!masked) CHECK(g == 0.0);
      }
    }

  // perturbing an unmasked position leaves the value unchanged
  Tensor perturbed = Tensor::from(logits.shape(), logits.data());
  perturbed.mutable_data()[1 * k + 2] += 10.0;  // row 1 = unmasked visual position
  CHECK(train::mvtm_loss(perturbed, batch, s, n, targets, bits).item() ==
        doctest::Approx(base).epsilon(1e-15));
}

TEST_CASE("an empty mask is rejected") {
  Tensor logits = Tensor::zeros({6, 4});
  std::vector<int> targets = {0, 0, 0, 0};
  std::vector<uint8_t> bits = {0, 0, 0, 0};
  CHECK_THROWS_AS(train::mvtm_loss(logits, 1, 6, 4, targets, bits), std::invalid_argument);
}

TEST_CASE("realized text-drop rate stays within two points of the configured rate") {
  auto cfg = tiny_config();
  auto prepared = random_prepared(cfg, 1000, 11);  // 5000 samples
  model::StoryTransformer model(cfg, 2);
  train::TrainConfig tc;
  tc.epochs = 1;
  tc.batch_stories = 20;
  tc.text_drop_rate = 0.2;
  tc.guidance_training = true;
  RngStream rng(77);
  auto stats = train::train_epoch(model, prepared, tc, 0, rng);
  CHECK(stats.drop_rate > 0.18);
  CHECK(stats.drop_rate < 0.22);
}

TEST_CASE("caption choice rate is near one half with augmentation") {
  auto cfg = tiny_config();
  auto prepared = random_prepared(cfg, 1000, 13, /*with_aug=*/true);
  model::StoryTransformer model(cfg, 3);
  train::TrainConfig tc;
  tc.epochs = 1;
  tc.batch_stories = 20;
  tc.augmentation = true;
  RngStream rng(7);
  auto stats = train::train_epoch(model, prepared, tc, 0, rng);
  CHECK(stats.original_caption_rate > 0.48);
  CHECK(stats.original_caption_rate < 0.52);
}

TEST_CASE("training is bit-reproducible under a fixed seed") {
  auto cfg = tiny_config();
  auto prepared = random_prepared(cfg, 40, 17);
  train::TrainConfig tc;
  tc.epochs = 2;
  tc.batch_stories = 8;
  tc.text_drop_rate = 0.2;

  model::StoryTransformer a(cfg, 5), b(cfg, 5);
  RngStream rng_a(9), rng_b(9);
  auto stats_a = train::train_model(a, prepared, tc, rng_a);
  auto stats_b = train::train_model(b, prepared, tc, rng_b);
  REQUIRE(stats_a.size() == stats_b.size());
  for (size_t e = 0; e < stats_a.size(); ++e) {
    CHECK(stats_a[e].loss == stats_b[e].loss);
    CHECK(stats_a[e].drop_rate == stats_b[e].drop_rate);
  }
  for (const auto& name : a.parameters().names())
    CHECK(a.parameters().get(name).data() == b.parameters().get(name).data());
}

TEST_CASE("a few epochs on a learnable mapping reduce the loss") {
  // captions fully determine the grids: the model should learn quickly
  auto cfg = tiny_config();
  RngStream rng(3);
  train::PreparedDataset prepared;
  prepared.n_stories = 60;
  prepared.frames = cfg.n_frames;
  for (int s = 0; s < 60; ++s)
    for (int f = 0; f < cfg.n_frames; ++f) {
      const int word = (s + f) % 6;
      prepared.captions.push_back(std::vector<int>(static_cast<size_t>(cfg.caption_len), word));
      prepared.grids.push_back(std::vector<int>(static_cast<size_t>(cfg.visual_len), word));
      prepared.presence.push_back(std::vector<uint8_t>(static_cast<size_t>(cfg.n_chars), 0));
      prepared.aug_captions.emplace_back();
      prepared.aug_presence.emplace_back();
    }
  model::StoryTransformer model(cfg, 41);
  train::TrainConfig tc;
  tc.lr = 1e-2;  // tiny model, small batch
  tc.epochs = 8;
  tc.batch_stories = 10;
  tc.guidance_training = false;
  RngStream rng_run(5);
  auto stats = train::train_model(model, prepared, tc, rng_run);
  CHECK(stats.front().loss > stats.back().loss);
  CHECK(stats.back().loss < 0.7 * stats.front().loss);
}

TEST_CASE("dataset frame count must match the model") {
  auto cfg = tiny_config();
  auto prepared = random_prepared(cfg, 4, 1);
  prepared.frames = 3;  // lie about the story length
  model::StoryTransformer model(cfg, 1);
  train::TrainConfig tc;
  RngStream rng(1);
  CHECK_THROWS_AS(train::train_epoch(model, prepared, tc, 0, rng), std::invalid_argument);
}
