#include "model/transformer.hpp"

#include <stdexcept>

#include "core/checkpoint.hpp"

namespace storygen::model {

using ad::Tensor;

void ModelConfig::validate() const {
  if (d <= 0 || n_head <= 0 || d % n_head != 0)
    throw std::invalid_argument("model config: hidden dim must be positive and divisible by heads");
  if (n_full < 0 || n_self < 0 || n_full + n_self < 1)
    throw std::invalid_argument("model config: need at least one layer");
  if (k_visual < 2 || visual_len < 1 || caption_len < 1 || n_frames < 1 || ffn_mult < 1)
    throw std::invalid_argument("model config: counts must be positive");
  if (char_embeddings && n_chars < 1)
    throw std::invalid_argument("model config: character embeddings need n_chars >= 1");
  if (text_vocab < 4)
    throw std::invalid_argument("model config: text vocabulary not set");
}

int64_t ModelConfig::expected_param_count() const {
  const int64_t dd = d;
  int64_t total = 0;
  total += static_cast<int64_t>(k_visual + 1) * dd;  // visual tokens + mask
  total += static_cast<int64_t>(text_vocab) * dd;
  if (char_embeddings) total += static_cast<int64_t>(2 * n_chars) * dd;
  total += static_cast<int64_t>(visual_len) * dd;
  total += static_cast<int64_t>(caption_len) * dd;
  total += static_cast<int64_t>(n_frames * caption_len) * dd;  // context positions
  const int64_t attn = 4 * (dd * dd + dd);                     // q,k,v,o projections
  const int64_t ffn = dd * (ffn_mult * dd) + ffn_mult * dd + (ffn_mult * dd) * dd + dd;
  const int64_t ln = 2 * dd;
  total += static_cast<int64_t>(n_full) * (attn * 2 + ffn + ln * 4);  // self+cross, 4 norms
  total += static_cast<int64_t>(n_self) * (attn + ffn + ln * 2);
  total += ln;                                  // final norm
  total += dd * k_visual + k_visual;            // output projection
  return total;
}

StoryTransformer::StoryTransformer(ModelConfig config, uint64_t init_seed) : config_(config) {
  config_.validate();
  RngStream rng = RngStream(init_seed).split("model-init");
  const int d = config_.d;
  const double sigma = 0.02;

  auto init_linear = [&](const std::string& name, int in, int out) {
    params_.create_normal(name + ".w", {in, out}, rng, sigma);
    params_.create_constant(name + ".b", {1, out}, 0.0);
  };
  auto init_norm = [&](const std::string& name) {
    params_.create_constant(name + ".g", {d}, 1.0);
    params_.create_constant(name + ".b", {d}, 0.0);
  };

  params_.create_normal("vis_embed", {config_.k_visual + 1, d}, rng, sigma);
  params_.create_normal("text_embed", {config_.text_vocab, d}, rng, sigma);
  if (config_.char_embeddings)
    params_.create_normal("char_embed", {2 * config_.n_chars, d}, rng, sigma);
  params_.create_normal("pos_vis", {config_.visual_len, d}, rng, sigma);
  params_.create_normal("pos_text", {config_.caption_len, d}, rng, sigma);
  params_.create_normal("pos_ctx", {config_.context_len(), d}, rng, sigma);

  const int n_layers = config_.n_full + config_.n_self;
  for (int i = 0; i < n_layers; ++i) {
    const std::string prefix = "layer" + std::to_string(i);
    init_norm(prefix + ".ln1");
    init_linear(prefix + ".attn.q", d, d);
    init_linear(prefix + ".attn.k", d, d);
    init_linear(prefix + ".attn.v", d, d);
    init_linear(prefix + ".attn.o", d, d);
    if (i < config_.n_full) {
      init_norm(prefix + ".ln_cross");
      init_norm(prefix + ".ln_ctx");
      init_linear(prefix + ".cross.q", d, d);
      init_linear(prefix + ".cross.k", d, d);
      init_linear(prefix + ".cross.v", d, d);
      init_linear(prefix + ".cross.o", d, d);
    }
    init_norm(prefix + ".ln2");
    init_linear(prefix + ".ffn.fc1", d, config_.ffn_mult * d);
    init_linear(prefix + ".ffn.fc2", config_.ffn_mult * d, d);
  }
  init_norm("ln_f");
  init_linear("out", d, config_.k_visual);
}

Tensor StoryTransformer::linear(const Tensor& x, const std::string& name) const {
  Tensor y = ad::matmul(x, params_.get(name + ".w"));
  return ad::add_tiled(y, params_.get(name + ".b"), y.dim(0));
}

Tensor StoryTransformer::norm(const Tensor& x, const std::string& name) const {
  return ad::layer_norm_rows(x, params_.get(name + ".g"), params_.get(name + ".b"));
}

std::vector<int> StoryTransformer::char_embedding_ids(const std::vector<uint8_t>& presence) {
  std::vector<int> ids(presence.size());
  for (size_t c = 0; c < presence.size(); ++c)
    ids[c] = static_cast<int>(2 * c) + (presence[c] ? 0 : 1);
  return ids;
}

Tensor StoryTransformer::build_context(const std::vector<std::vector<int>>& caption_ids) const {
  if (static_cast<int>(caption_ids.size()) != config_.n_frames)
    throw std::invalid_argument("build_context: expected " + std::to_string(config_.n_frames) +
                                " captions, got " + std::to_string(caption_ids.size()));
  std::vector<int> ids;
  ids.reserve(static_cast<size_t>(config_.context_len()));
  for (const auto& caption : caption_ids) {
    if (static_cast<int>(caption.size()) != config_.caption_len)
      throw std::invalid_argument("build_context: caption length must be exactly " +
                                  std::to_string(config_.caption_len));
    ids.insert(ids.end(), caption.begin(), caption.end());
  }
  Tensor emb = ad::embedding(params_.get("text_embed"), ids);
  return ad::add(emb, params_.get("pos_ctx"));
}

Tensor StoryTransformer::null_context() const {
  const int null_id = config_.text_vocab - 2;  // PAD, NULL, UNK tail convention
  std::vector<int> ids(static_cast<size_t>(config_.context_len()), null_id);
  return ad::embedding(params_.get("text_embed"), ids);
}

Tensor StoryTransformer::build_batch(const std::vector<SampleInput>& samples) const {
  if (samples.empty()) throw std::invalid_argument("build_batch: empty batch");
  const int batch = static_cast<int>(samples.size());
  const int n = config_.visual_len, l = config_.caption_len;
  const int null_id = config_.text_vocab - 2;

  std::vector<int> vis_ids, text_ids, ce_ids;
  vis_ids.reserve(static_cast<size_t>(batch) * n);
  text_ids.reserve(static_cast<size_t>(batch) * l);
  std::vector<uint8_t> text_pos_active(static_cast<size_t>(batch), 1);

  for (int b = 0; b < batch; ++b) {
    const SampleInput& s = samples[static_cast<size_t>(b)];
    if (!s.grid || static_cast<int>(s.grid->size()) != n)
      throw std::invalid_argument("build_batch: grid must hold exactly " + std::to_string(n) +
                                  " visual ids");
    if (!s.caption || static_cast<int>(s.caption->size()) != l)
      throw std::invalid_argument("build_batch: caption must hold exactly " + std::to_string(l) +
                                  " token ids");
    vis_ids.insert(vis_ids.end(), s.grid->begin(), s.grid->end());
    if (s.drop_text) {
      text_ids.insert(text_ids.end(), static_cast<size_t>(l), null_id);
      text_pos_active[static_cast<size_t>(b)] = 0;
    } else {
      text_ids.insert(text_ids.end(), s.caption->begin(), s.caption->end());
    }
    if (config_.char_embeddings) {
      if (!s.presence || static_cast<int>(s.presence->size()) != config_.n_chars)
        throw std::invalid_argument("build_batch: presence must hold exactly " +
                                    std::to_string(config_.n_chars) + " bits");
      auto ids = char_embedding_ids(*s.presence);
      ce_ids.insert(ce_ids.end(), ids.begin(), ids.end());
    } else if (s.presence) {
      throw std::invalid_argument("build_batch: presence given but character embeddings disabled");
    }
  }

  Tensor vis = ad::embedding(params_.get("vis_embed"), vis_ids);
  vis = ad::add_tiled(vis, params_.get("pos_vis"), batch);
  // dropped samples carry the bare NULL embedding, no positional signal
  Tensor text = ad::embedding(params_.get("text_embed"), text_ids);
  text = ad::add_tiled_masked(text, params_.get("pos_text"), text_pos_active);

  if (!config_.char_embeddings) return ad::interleave_blocks({vis, text}, {n, l}, batch);
  Tensor ce = ad::embedding(params_.get("char_embed"), ce_ids);
  return ad::interleave_blocks({vis, text, ce}, {n, l, config_.n_chars}, batch);
}

InputSequence StoryTransformer::build_input(const std::vector<int>& grid,
                                            const std::vector<int>& caption,
                                            const std::vector<uint8_t>* presence,
                                            bool drop_text) const {
  InputSequence input;
  input.grid = grid;
  input.caption = caption;
  if (presence) {
    input.presence = *presence;
    input.has_presence = true;
  }
  input.dropped = drop_text;
  SampleInput s;
  s.grid = &input.grid;
  s.caption = &input.caption;
  s.presence = input.has_presence ? &input.presence : nullptr;
  s.drop_text = drop_text;
  input.seq = build_batch({s});
  return input;
}

InputSequence StoryTransformer::apply_text_drop(const InputSequence& input) const {
  return build_input(input.grid, input.caption, input.has_presence ? &input.presence : nullptr,
                     /*drop_text=*/true);
}

Tensor StoryTransformer::forward(const Tensor& batch_seq, int batch, const Tensor& contexts,
                                 const std::vector<int>& ctx_of) const {
  const int s = config_.seq_len();
  const int c = config_.context_len();
  if (batch_seq.ndim() != 2 || batch_seq.dim(1) != config_.d || batch_seq.dim(0) != batch * s)
    throw std::invalid_argument("forward: input sequence tensor does not match batch * seq_len");
  if (config_.n_full > 0) {
    if (contexts.ndim() != 2 || contexts.dim(1) != config_.d || contexts.dim(0) % c != 0)
      throw std::invalid_argument("forward: context tensor must stack blocks of n*L rows");
    if (static_cast<int>(ctx_of.size()) != batch)
      throw std::invalid_argument("forward: one context index per sample required");
  }

  std::vector<int> self_map(static_cast<size_t>(batch));
  for (int b = 0; b < batch; ++b) self_map[static_cast<size_t>(b)] = b;

  Tensor x = batch_seq;
  const int n_layers = config_.n_full + config_.n_self;
  for (int i = 0; i < n_layers; ++i) {
    const std::string prefix = "layer" + std::to_string(i);
    {
      Tensor h = norm(x, prefix + ".ln1");
      Tensor attn = ad::attention(linear(h, prefix + ".attn.q"), linear(h, prefix + ".attn.k"),
                                  linear(h, prefix + ".attn.v"), config_.n_head, s, s, self_map);
      x = ad::add(x, linear(attn, prefix + ".attn.o"));
    }
    if (i < config_.n_full) {
      Tensor h = norm(x, prefix + ".ln_cross");
      Tensor ctx = norm(contexts, prefix + ".ln_ctx");
      Tensor attn = ad::attention(linear(h, prefix + ".cross.q"), linear(ctx, prefix + ".cross.k"),
                                  linear(ctx, prefix + ".cross.v"), config_.n_head, s, c, ctx_of);
      x = ad::add(x, linear(attn, prefix + ".cross.o"));
    }
    {
      Tensor h = norm(x, prefix + ".ln2");
      x = ad::add(x, linear(ad::gelu(linear(h, prefix + ".ffn.fc1")), prefix + ".ffn.fc2"));
    }
  }
  return linear(norm(x, "ln_f"), "out");
}

Tensor StoryTransformer::forward_single(const InputSequence& input, const Tensor& context) const {
  return forward(input.seq, 1, context, {0});
}

void StoryTransformer::save(const std::filesystem::path& path) const {
  Checkpoint ck;
  ck.component = "story-transformer";
  ck.meta["d"] = std::to_string(config_.d);
  ck.meta["n_full"] = std::to_string(config_.n_full);
  ck.meta["n_self"] = std::to_string(config_.n_self);
  ck.meta["n_head"] = std::to_string(config_.n_head);
  ck.meta["k_visual"] = std::to_string(config_.k_visual);
  ck.meta["visual_len"] = std::to_string(config_.visual_len);
  ck.meta["caption_len"] = std::to_string(config_.caption_len);
  ck.meta["n_chars"] = std::to_string(config_.n_chars);
  ck.meta["n_frames"] = std::to_string(config_.n_frames);
  ck.meta["ffn_mult"] = std::to_string(config_.ffn_mult);
  ck.meta["text_vocab"] = std::to_string(config_.text_vocab);
  ck.meta["char_embeddings"] = config_.char_embeddings ? "1" : "0";
  ck.arrays = params_.export_arrays();
  save_checkpoint(path, ck);
}

StoryTransformer StoryTransformer::load(const std::filesystem::path& path) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.component != "story-transformer")
    throw std::runtime_error("model load: checkpoint holds component '" + ck.component + "'");
  ModelConfig config;
  config.d = std::stoi(ck.meta.at("d"));
  config.n_full = std::stoi(ck.meta.at("n_full"));
  config.n_self = std::stoi(ck.meta.at("n_self"));
  config.n_head = std::stoi(ck.meta.at("n_head"));
  config.k_visual = std::stoi(ck.meta.at("k_visual"));
  config.visual_len = std::stoi(ck.meta.at("visual_len"));
  config.caption_len = std::stoi(ck.meta.at("caption_len"));
  config.n_chars = std::stoi(ck.meta.at("n_chars"));
  config.n_frames = std::stoi(ck.meta.at("n_frames"));
  config.ffn_mult = std::stoi(ck.meta.at("ffn_mult"));
  config.text_vocab = std::stoi(ck.meta.at("text_vocab"));
  config.char_embeddings = ck.meta_or("char_embeddings", "1") == "1";
  StoryTransformer model(config, /*init_seed=*/0);
  model.params_.import_arrays(ck.arrays);
  return model;
}

}  // namespace storygen::model
