#pragma once

#include <vector>

#include "ad/tensor.hpp"
#include "bpe/bpe.hpp"
#include "data/story.hpp"
#include "model/transformer.hpp"
#include "vq/vq.hpp"

namespace storygen::train {

// cosine mask schedule: 1 at r=0, 0 at r=1, strictly decreasing
double mask_gamma(double r);

struct MaskSample {
  std::vector<uint8_t> bits;  // 1 = masked
  int count = 0;
};

// draw r ~ U[0,1), mask ceil(gamma(r) * n) positions without replacement (>= 1)
MaskSample sample_mask(int n, RngStream& rng);
int scheduled_mask_count(double r, int n);

// Mean negative log-likelihood over masked visual positions. Unmasked and
// non-visual rows contribute exactly zero, both to the value and gradient.
ad::Tensor mvtm_loss(const ad::Tensor& logits, int batch, int seq_len, int visual_len,
                     const std::vector<int>& targets, const std::vector<uint8_t>& mask_bits);

struct TrainConfig {
  double lr = 1e-3;
  int epochs = 50;
  int batch_stories = 4;
  double text_drop_rate = 0.2;
  bool guidance_training = true;  // character embeddings in the input, text-drop active
  bool augmentation = false;      // sample between original and augmented captions
  uint64_t seed = 0;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0;
  double drop_rate = 0;
  double original_caption_rate = 1.0;  // among frames that had an augmented alternative
  double wall_seconds = 0;
};

// Tokenized captions and pre-encoded visual token grids for one split.
struct PreparedDataset {
  int n_stories = 0;
  int frames = 0;
  std::vector<std::vector<int>> grids;            // [story*frames] visual ids
  std::vector<std::vector<int>> captions;         // [story*frames] token ids, length L
  std::vector<std::vector<int>> aug_captions;     // empty vector where absent
  std::vector<std::vector<uint8_t>> presence;     // from original captions
  std::vector<std::vector<uint8_t>> aug_presence; // from augmented captions

  int index(int story, int frame) const { return story * frames + frame; }
};

PreparedDataset prepare_dataset(const data::Dataset& dataset, const vq::VqTokenizer& tokenizer,
                                const bpe::BpeVocab& vocab, int caption_len);

EpochStats train_epoch(model::StoryTransformer& model, const PreparedDataset& prepared,
                       const TrainConfig& config, int epoch, RngStream& run_rng);

std::vector<EpochStats> train_model(model::StoryTransformer& model,
                                    const PreparedDataset& prepared, const TrainConfig& config,
                                    RngStream& run_rng);

}  // namespace storygen::train
