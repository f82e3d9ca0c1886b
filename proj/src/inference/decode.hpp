#pragma once

#include <vector>

#include "bpe/bpe.hpp"
#include "data/story.hpp"
#include "model/transformer.hpp"
#include "vq/vq.hpp"

namespace storygen::infer {

struct GuidanceConfig {
  double lambda = 0.2;
  bool positive_enabled = true;
  bool negative_enabled = true;
  bool enabled() const { return positive_enabled || negative_enabled; }
};

// logit combination for character guidance, elementwise over N x K:
//   both prompts:  (1-l)*tc + 2l*pos - l*neg
//   positive only: (1-l)*tc + l*pos
//   negative only: (1+l)*tc - l*neg
std::vector<double> guided_logits(const std::vector<double>& text_conditional,
                                  const std::vector<double>& character,
                                  const std::vector<double>& character_negative, double lambda);
std::vector<double> combine_logits(const GuidanceConfig& guidance,
                                   const std::vector<double>& text_conditional,
                                   const std::vector<double>& character,
                                   const std::vector<double>& character_negative);

// positive prompt keeps the presence bits; the complement prompt inverts them
std::pair<std::vector<uint8_t>, std::vector<uint8_t>> build_char_prompts(
    const std::vector<uint8_t>& presence);

struct DecodeOptions {
  int steps = 20;                  // T
  double sample_temperature = 1.0; // 0 selects the argmax token
  double confidence_noise = 1.0;   // gumbel scale, annealed by (1 - t/T)
  GuidanceConfig guidance;
  bool use_guidance = true;  // ignored for models without character embeddings? no: error
};

struct DecodeState {
  std::vector<int> canvas;         // token ids; mask_token where masked
  std::vector<uint8_t> mask;       // 1 = still masked
  int step = 0;                    // completed steps
  int total_steps = 0;
  std::vector<double> confidence;  // selection score of each kept token

  int masked_count() const {
    int count = 0;
    for (uint8_t m : mask) count += m ? 1 : 0;
    return count;
  }
};

DecodeState init_decode_state(int n, int mask_token, int total_steps);

// tokens kept after step t of T (cosine unmasking schedule); equals n at t=T
int scheduled_keep_total(int t, int total_steps, int n);

// One re-masking iteration driven by externally computed logits (N x K,
// row-major). Samples every masked position, keeps the highest-confidence
// draws up to the schedule, re-masks the rest. Kept positions never change.
void decode_step_with_logits(DecodeState& state, const std::vector<double>& logits, int k,
                             int mask_token, const DecodeOptions& options, RngStream& rng);

struct StoryDecodeResult {
  std::vector<std::vector<int>> grids;
  std::vector<std::vector<double>> images;  // planar [0,1] floats per frame
};

// Full-story decoding: every frame is decoded against the shared story
// context over T iterations, then rendered through the tokenizer's decoder.
// Only original captions are used at inference time.
StoryDecodeResult decode_story(const model::StoryTransformer& model,
                               const vq::VqTokenizer& tokenizer, const bpe::BpeVocab& vocab,
                               const std::vector<std::string>& captions,
                               const data::CharacterSet& characters, const DecodeOptions& options,
                               RngStream& rng);

}  // namespace storygen::infer
