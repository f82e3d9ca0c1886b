#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ad/optim.hpp"
#include "ad/tensor.hpp"
#include "core/rng.hpp"

namespace storygen::model {

struct ModelConfig {
  int d = 64;
  int n_full = 2;   // layers with a cross-attention sub-layer
  int n_self = 4;   // layers without one
  int n_head = 8;
  int k_visual = 32;    // visual token vocabulary (K)
  int visual_len = 64;  // tokens per image (N)
  int caption_len = 32; // text tokens per caption (L)
  int n_chars = 9;      // recurring characters (n_c)
  int n_frames = 5;     // captions per story (n)
  int ffn_mult = 4;
  int text_vocab = 0;   // text table size including PAD/NULL/UNK
  bool char_embeddings = true;

  void validate() const;
  int seq_len() const { return visual_len + caption_len + (char_embeddings ? n_chars : 0); }
  int context_len() const { return n_frames * caption_len; }
  int mask_token() const { return k_visual; }
  int head_dim() const { return d / n_head; }
  int64_t expected_param_count() const;
};

// One sample in a training/inference batch. Pointers reference caller-owned
// buffers that must outlive the forward call.
struct SampleInput {
  const std::vector<int>* grid = nullptr;          // visual ids, mask_token where masked
  const std::vector<int>* caption = nullptr;       // caption token ids, length L
  const std::vector<uint8_t>* presence = nullptr;  // n_c bits; required when CE are enabled
  bool drop_text = false;
  int context_block = 0;  // index into the batched context tensor
};

// Spec-level single-sample view of a composed input sequence.
struct InputSequence {
  std::vector<int> grid;
  std::vector<int> caption;
  std::vector<uint8_t> presence;
  bool has_presence = false;
  bool dropped = false;
  ad::Tensor seq;  // [S, d]
};

// Cross-attention masked generative transformer over flattened visual
// tokens, caption tokens and optional character embeddings. Full layers
// run self-attention, cross-attention to the story context, then a feed
// forward block; self layers skip cross-attention. Pre-layer norm
// throughout, learned absolute positions per segment.
class StoryTransformer {
 public:
  StoryTransformer(ModelConfig config, uint64_t init_seed);

  const ModelConfig& config() const { return config_; }
  ad::ParameterStore& parameters() { return params_; }
  const ad::ParameterStore& parameters() const { return params_; }

  // context = all story captions embedded and concatenated, [n*L, d]
  ad::Tensor build_context(const std::vector<std::vector<int>>& caption_ids) const;
  // text-free context: every row is the NULL embedding
  ad::Tensor null_context() const;

  InputSequence build_input(const std::vector<int>& grid, const std::vector<int>& caption,
                            const std::vector<uint8_t>* presence, bool drop_text = false) const;
  // replace all text rows with the shared NULL embedding (idempotent)
  InputSequence apply_text_drop(const InputSequence& input) const;

  // batched input assembly, [B*S, d]
  ad::Tensor build_batch(const std::vector<SampleInput>& samples) const;

  // contexts: G stacked context blocks [G*ctx_len, d]; ctx_of maps each
  // sample to its block. Returns logits [B*S, k_visual].
  ad::Tensor forward(const ad::Tensor& batch_seq, int batch, const ad::Tensor& contexts,
                     const std::vector<int>& ctx_of) const;

  // single-sample convenience returning [S, K] logits
  ad::Tensor forward_single(const InputSequence& input, const ad::Tensor& context) const;

  void save(const std::filesystem::path& path) const;
  static StoryTransformer load(const std::filesystem::path& path);

  // character embedding row selection: positive rows sit at 2c, negative at 2c+1
  static std::vector<int> char_embedding_ids(const std::vector<uint8_t>& presence);

 private:
  ad::Tensor linear(const ad::Tensor& x, const std::string& name) const;
  ad::Tensor norm(const ad::Tensor& x, const std::string& name) const;

  ModelConfig config_;
  ad::ParameterStore params_;
};

}  // namespace storygen::model
