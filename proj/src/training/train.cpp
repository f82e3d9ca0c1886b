#include "training/train.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <stdexcept>

namespace storygen::train {

using ad::Tensor;

double mask_gamma(double r) {
  if (r <= 0.0) return 1.0;
  if (r >= 1.0) return 0.0;
  return std::cos(M_PI * r / 2.0);
}

int scheduled_mask_count(double r, int n) {
  const int count = static_cast<int>(std::ceil(mask_gamma(r) * n));
  return std::max(1, std::min(count, n));
}

MaskSample sample_mask(int n, RngStream& rng) {
  if (n < 1) throw std::invalid_argument("sample_mask: n must be >= 1");
  const double r = rng.uniform();
  const int count = scheduled_mask_count(r, n);
  // partial Fisher-Yates: first `count` entries are a uniform sample
  std::vector<int> positions(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) positions[static_cast<size_t>(i)] = i;
  for (int i = 0; i < count; ++i) {
    const int j = i + rng.uniform_int(n - i);
    std::swap(positions[static_cast<size_t>(i)], positions[static_cast<size_t>(j)]);
  }
  MaskSample out;
  out.bits.assign(static_cast<size_t>(n), 0);
  out.count = count;
  for (int i = 0; i < count; ++i) out.bits[static_cast<size_t>(positions[static_cast<size_t>(i)])] = 1;
  return out;
}

Tensor mvtm_loss(const Tensor& logits, int batch, int seq_len, int visual_len,
                 const std::vector<int>& targets, const std::vector<uint8_t>& mask_bits) {
  if (logits.ndim() != 2 || logits.dim(0) != batch * seq_len)
    throw std::invalid_argument("mvtm_loss: logits do not match batch * seq_len rows");
  if (static_cast<int>(targets.size()) != batch * visual_len ||
      targets.size() != mask_bits.size())
    throw std::invalid_argument("mvtm_loss: need one target and mask bit per visual position");

  int64_t masked = 0;
  for (uint8_t m : mask_bits) masked += m ? 1 : 0;
  if (masked == 0) throw std::invalid_argument("mvtm_loss: mask must cover at least one position");

  // dummy targets on non-visual rows; their weight is exactly zero
  std::vector<int> row_targets(static_cast<size_t>(batch) * seq_len, 0);
  std::vector<ad::real> weights(static_cast<size_t>(batch) * seq_len, 0.0);
  const ad::real w = 1.0 / static_cast<ad::real>(masked);
  for (int b = 0; b < batch; ++b) {
    for (int p = 0; p < visual_len; ++p) {
      const size_t row = static_cast<size_t>(b) * seq_len + p;
      const size_t vis = static_cast<size_t>(b) * visual_len + p;
      row_targets[row] = targets[vis];
      if (mask_bits[vis]) weights[row] = w;
    }
  }
  return ad::weighted_sum(ad::cross_entropy_rows(logits, row_targets), weights);
}

PreparedDataset prepare_dataset(const data::Dataset& dataset, const vq::VqTokenizer& tokenizer,
                                const bpe::BpeVocab& vocab, int caption_len) {
  PreparedDataset out;
  out.n_stories = static_cast<int>(dataset.stories.size());
  out.frames = dataset.frames_per_story;

  std::vector<std::vector<double>> images;
  images.reserve(static_cast<size_t>(out.n_stories) * out.frames);
  for (const auto& story : dataset.stories)
    for (const auto& frame : story.frames) images.push_back(data::frame_to_chw(frame));
  out.grids = tokenizer.encode(images);

  for (const auto& story : dataset.stories) {
    for (int f = 0; f < out.frames; ++f) {
      out.captions.push_back(vocab.encode(story.captions[static_cast<size_t>(f)], caption_len));
      out.presence.push_back(story.presence[static_cast<size_t>(f)]);
      if (story.has_aug(f)) {
        const auto& aug = story.aug_captions[static_cast<size_t>(f)];
        out.aug_captions.push_back(vocab.encode(aug, caption_len));
        out.aug_presence.push_back(data::character_presence(aug, dataset.characters));
      } else {
        out.aug_captions.emplace_back();
        out.aug_presence.emplace_back();
      }
    }
  }
  return out;
}

EpochStats train_epoch(model::StoryTransformer& model, const PreparedDataset& prepared,
                       const TrainConfig& config, int epoch, RngStream& run_rng) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& cfg = model.config();
  const int n = cfg.visual_len, s = cfg.seq_len(), frames = prepared.frames;
  if (prepared.n_stories == 0) throw std::invalid_argument("train_epoch: empty dataset");
  if (frames != cfg.n_frames)
    throw std::invalid_argument("train_epoch: dataset stories have " + std::to_string(frames) +
                                " frames but the model expects " + std::to_string(cfg.n_frames));

  RngStream order_rng = run_rng.split("order").fork(static_cast<uint64_t>(epoch));
  RngStream choice_rng = run_rng.split("caption").fork(static_cast<uint64_t>(epoch));
  RngStream mask_rng = run_rng.split("mask").fork(static_cast<uint64_t>(epoch));
  RngStream drop_rng = run_rng.split("drop").fork(static_cast<uint64_t>(epoch));

  std::vector<int> story_order(static_cast<size_t>(prepared.n_stories));
  for (size_t i = 0; i < story_order.size(); ++i) story_order[i] = static_cast<int>(i);
  order_rng.shuffle(story_order);

  ad::AdamSettings adam;
  adam.lr = config.lr;

  double loss_weighted = 0;
  int64_t masked_total = 0;
  int64_t dropped = 0, samples = 0;
  int64_t original_used = 0, choice_total = 0;

  const int batch_stories = std::max(1, config.batch_stories);
  for (size_t start = 0; start < story_order.size(); start += static_cast<size_t>(batch_stories)) {
    const size_t story_count = std::min(static_cast<size_t>(batch_stories),
                                        story_order.size() - start);

    struct FrameSlot {
      std::vector<int> masked_grid;
      const std::vector<int>* caption;
      const std::vector<uint8_t>* presence;
      bool drop = false;
      int ctx_block = 0;
      int64_t mask_count = 0;
      std::vector<uint8_t> mask_bits;
      const std::vector<int>* target_grid;
    };
    std::vector<FrameSlot> slots;
    slots.reserve(story_count * static_cast<size_t>(frames));
    std::vector<Tensor> context_blocks;
    // stable storage for per-epoch caption choices referenced by the slots
    std::deque<std::vector<int>> caption_arena;
    bool need_null_block = false;

    for (size_t i = 0; i < story_count; ++i) {
      const int story = story_order[start + i];
      // per-epoch caption choice, applied consistently to input and context
      std::vector<std::vector<int>> chosen(static_cast<size_t>(frames));
      std::vector<const std::vector<uint8_t>*> chosen_presence(static_cast<size_t>(frames));
      for (int f = 0; f < frames; ++f) {
        const int idx = prepared.index(story, f);
        const bool has_aug = config.augmentation &&
                             !prepared.aug_captions[static_cast<size_t>(idx)].empty();
        bool use_original = true;
        if (has_aug) {
          use_original = choice_rng.bernoulli(0.5);
          ++choice_total;
          if (use_original) ++original_used;
        }
        chosen[static_cast<size_t>(f)] = use_original
                                             ? prepared.captions[static_cast<size_t>(idx)]
                                             : prepared.aug_captions[static_cast<size_t>(idx)];
        chosen_presence[static_cast<size_t>(f)] =
            use_original ? &prepared.presence[static_cast<size_t>(idx)]
                         : &prepared.aug_presence[static_cast<size_t>(idx)];
      }
      context_blocks.push_back(model.build_context(chosen));
      const int ctx_index = static_cast<int>(context_blocks.size()) - 1;

      for (int f = 0; f < frames; ++f) {
        const int idx = prepared.index(story, f);
        caption_arena.push_back(std::move(chosen[static_cast<size_t>(f)]));
        FrameSlot slot;
        slot.caption = &caption_arena.back();
        slot.presence = chosen_presence[static_cast<size_t>(f)];
        slot.target_grid = &prepared.grids[static_cast<size_t>(idx)];
        slot.drop = config.guidance_training && drop_rng.bernoulli(config.text_drop_rate);
        if (slot.drop) {
          ++dropped;
          need_null_block = true;
        }
        MaskSample mask = sample_mask(n, mask_rng);
        slot.mask_bits = std::move(mask.bits);
        slot.mask_count = mask.count;
        slot.masked_grid = *slot.target_grid;
        for (int p = 0; p < n; ++p)
          if (slot.mask_bits[static_cast<size_t>(p)])
            slot.masked_grid[static_cast<size_t>(p)] = cfg.mask_token();
        slot.ctx_block = slot.drop ? -1 : ctx_index;
        slots.push_back(std::move(slot));
        ++samples;
      }
    }

    const int null_block = static_cast<int>(context_blocks.size());
    if (need_null_block) context_blocks.push_back(model.null_context());

    std::vector<model::SampleInput> inputs;
    std::vector<int> ctx_of;
    std::vector<int> targets;
    std::vector<uint8_t> mask_bits;
    for (auto& slot : slots) {
      model::SampleInput in;
      in.grid = &slot.masked_grid;
      in.caption = slot.caption;
      in.presence = cfg.char_embeddings ? slot.presence : nullptr;
      in.drop_text = slot.drop;
      inputs.push_back(in);
      ctx_of.push_back(slot.ctx_block < 0 ? null_block : slot.ctx_block);
      targets.insert(targets.end(), slot.target_grid->begin(), slot.target_grid->end());
      mask_bits.insert(mask_bits.end(), slot.mask_bits.begin(), slot.mask_bits.end());
    }

    const int batch = static_cast<int>(inputs.size());
    Tensor batch_seq = model.build_batch(inputs);
    Tensor contexts = ad::concat_rows(context_blocks);
    Tensor logits = model.forward(batch_seq, batch, contexts, ctx_of);
    Tensor loss = mvtm_loss(logits, batch, s, n, targets, mask_bits);

    const double loss_value = loss.item();
    if (!std::isfinite(loss_value))
      throw std::runtime_error("train_epoch: non-finite loss at epoch " + std::to_string(epoch));
    loss.backward();
    model.parameters().fill_missing_grads();
    model.parameters().adam_step(adam);

    int64_t batch_masked = 0;
    for (const auto& slot : slots) batch_masked += slot.mask_count;
    loss_weighted += loss_value * static_cast<double>(batch_masked);
    masked_total += batch_masked;
  }

  EpochStats stats;
  stats.epoch = epoch;
  stats.loss = masked_total > 0 ? loss_weighted / static_cast<double>(masked_total) : 0.0;
  stats.drop_rate = samples > 0 ? static_cast<double>(dropped) / static_cast<double>(samples) : 0.0;
  stats.original_caption_rate =
      choice_total > 0 ? static_cast<double>(original_used) / static_cast<double>(choice_total)
                       : 1.0;
  stats.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return stats;
}

std::vector<EpochStats> train_model(model::StoryTransformer& model,
                                    const PreparedDataset& prepared, const TrainConfig& config,
                                    RngStream& run_rng) {
  std::vector<EpochStats> all;
  for (int epoch = 0; epoch < config.epochs; ++epoch)
    all.push_back(train_epoch(model, prepared, config, epoch, run_rng));
  return all;
}

}  // namespace storygen::train
