#include "inference/decode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "training/train.hpp"

namespace storygen::infer {

std::vector<double> guided_logits(const std::vector<double>& text_conditional,
                                  const std::vector<double>& character,
                                  const std::vector<double>& character_negative, double lambda) {
  if (lambda < 0.0 || lambda >= 1.0)
    throw std::invalid_argument("guided_logits: lambda must lie in [0, 1)");
  if (text_conditional.size() != character.size() ||
      text_conditional.size() != character_negative.size())
    throw std::invalid_argument("guided_logits: logit buffers must have identical shapes");
  std::vector<double> out(text_conditional.size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = (1.0 - lambda) * text_conditional[i] + 2.0 * lambda * character[i] -
             lambda * character_negative[i];
  return out;
}

std::vector<double> combine_logits(const GuidanceConfig& guidance,
                                   const std::vector<double>& text_conditional,
                                   const std::vector<double>& character,
                                   const std::vector<double>& character_negative) {
  const double l = guidance.lambda;
  if (l < 0.0 || l >= 1.0)
    throw std::invalid_argument("combine_logits: lambda must lie in [0, 1)");
  if (guidance.positive_enabled && guidance.negative_enabled)
    return guided_logits(text_conditional, character, character_negative, l);
  std::vector<double> out(text_conditional.size());
  if (guidance.positive_enabled) {
    for (size_t i = 0; i < out.size(); ++i)
      out[i] = (1.0 - l) * text_conditional[i] + l * character[i];
  } else if (guidance.negative_enabled) {
    for (size_t i = 0; i < out.size(); ++i)
      out[i] = (1.0 + l) * text_conditional[i] - l * character_negative[i];
  } else {
    out = text_conditional;
  }
  return out;
}

std::pair<std::vector<uint8_t>, std::vector<uint8_t>> build_char_prompts(
    const std::vector<uint8_t>& presence) {
  std::vector<uint8_t> positive = presence;
  std::vector<uint8_t> complement(presence.size());
  for (size_t i = 0; i < presence.size(); ++i) complement[i] = presence[i] ? 0 : 1;
  return {std::move(positive), std::move(complement)};
}

DecodeState init_decode_state(int n, int mask_token, int total_steps) {
  if (n < 1 || total_steps < 1)
    throw std::invalid_argument("init_decode_state: n and total_steps must be positive");
  DecodeState state;
  state.canvas.assign(static_cast<size_t>(n), mask_token);
  state.mask.assign(static_cast<size_t>(n), 1);
  state.confidence.assign(static_cast<size_t>(n), 0.0);
  state.total_steps = total_steps;
  return state;
}

int scheduled_keep_total(int t, int total_steps, int n) {
  if (t >= total_steps) return n;
  const double g = train::mask_gamma(static_cast<double>(t) / total_steps);
  const int still_masked = static_cast<int>(std::ceil(g * n));
  return std::max(0, n - std::min(still_masked, n));
}

namespace {

// softmax sample over one row of logits; temperature 0 takes the argmax.
// prob_out receives the chosen token's probability under the sampling
// distribution (temperature-1 softmax in greedy mode).
int sample_token(const double* logits, int k, double temperature, RngStream& rng,
                 double* prob_out) {
  std::vector<double> p(static_cast<size_t>(k));
  const double temp = temperature > 0.0 ? temperature : 1.0;
  double mx = logits[0];
  for (int j = 1; j < k; ++j) mx = std::max(mx, logits[j]);
  double total = 0.0;
  for (int j = 0; j < k; ++j) total += p[static_cast<size_t>(j)] = std::exp((logits[j] - mx) / temp);
  for (int j = 0; j < k; ++j) p[static_cast<size_t>(j)] /= total;

  int token;
  if (temperature <= 0.0) {
    token = 0;
    for (int j = 1; j < k; ++j)
      if (logits[j] > logits[token]) token = j;
  } else {
    const double u = rng.uniform();
    double acc = 0.0;
    token = k - 1;
    for (int j = 0; j < k; ++j) {
      acc += p[static_cast<size_t>(j)];
      if (u < acc) {
        token = j;
        break;
      }
    }
  }
  *prob_out = p[static_cast<size_t>(token)];
  return token;
}

}  // namespace

void decode_step_with_logits(DecodeState& state, const std::vector<double>& logits, int k,
                             int mask_token, const DecodeOptions& options, RngStream& rng) {
  const int n = static_cast<int>(state.canvas.size());
  if (logits.size() != static_cast<size_t>(n) * k)
    throw std::invalid_argument("decode_step: logits must cover N x K entries");
  if (state.step >= state.total_steps)
    throw std::invalid_argument("decode_step: decoding already complete");
  if (state.masked_count() == 0)
    throw std::invalid_argument("decode_step: no masked positions left");

  const int t = state.step + 1;
  const double noise_scale =
      options.confidence_noise * (1.0 - static_cast<double>(t) / state.total_steps);

  struct Draw {
    int position;
    int token;
    double score;
  };
  std::vector<Draw> draws;
  draws.reserve(static_cast<size_t>(n));
  for (int pos = 0; pos < n; ++pos) {
    if (!state.mask[static_cast<size_t>(pos)]) continue;
    double prob = 0.0;
    const int token = sample_token(logits.data() + static_cast<size_t>(pos) * k, k,
                                   options.sample_temperature, rng, &prob);
    double score = prob;
    if (noise_scale > 0.0) score += noise_scale * rng.gumbel();
    draws.push_back({pos, token, score});
  }

  const int kept_before = n - state.masked_count();
  const int keep_target = scheduled_keep_total(t, state.total_steps, n);
  const int new_keep = std::max(0, keep_target - kept_before);

  // highest score first; equal scores resolve to the lower position index
  std::sort(draws.begin(), draws.end(), [](const Draw& a, const Draw& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.position < b.position;
  });
  const int kept_now = std::min<int>(new_keep, static_cast<int>(draws.size()));
  for (int i = 0; i < kept_now; ++i) {
    const Draw& d = draws[static_cast<size_t>(i)];
    state.canvas[static_cast<size_t>(d.position)] = d.token;
    state.mask[static_cast<size_t>(d.position)] = 0;
    state.confidence[static_cast<size_t>(d.position)] = d.score;
  }
  // everything else stays masked for a later iteration
  for (size_t i = static_cast<size_t>(kept_now); i < draws.size(); ++i)
    state.canvas[static_cast<size_t>(draws[i].position)] = mask_token;
  ++state.step;
}

StoryDecodeResult decode_story(const model::StoryTransformer& model,
                               const vq::VqTokenizer& tokenizer, const bpe::BpeVocab& vocab,
                               const std::vector<std::string>& captions,
                               const data::CharacterSet& characters, const DecodeOptions& options,
                               RngStream& rng) {
  const auto& cfg = model.config();
  if (static_cast<int>(captions.size()) != cfg.n_frames)
    throw std::invalid_argument("decode_story: got " + std::to_string(captions.size()) +
                                " captions but the model expects " + std::to_string(cfg.n_frames));
  if (options.steps < 1) throw std::invalid_argument("decode_story: steps must be >= 1");
  const bool guide = options.use_guidance && options.guidance.enabled();
  if (guide && !cfg.char_embeddings)
    throw std::invalid_argument(
        "decode_story: character guidance requires a model with character embeddings");
  if (cfg.char_embeddings && static_cast<int>(characters.characters.size()) != cfg.n_chars)
    throw std::invalid_argument("decode_story: character set does not match the model");

  ad::NoGradGuard no_grad;
  const int n = cfg.visual_len, k = cfg.k_visual, frames = cfg.n_frames;

  std::vector<std::vector<int>> caption_ids;
  std::vector<std::vector<uint8_t>> presence, complement;
  for (const auto& caption : captions) {
    caption_ids.push_back(vocab.encode(caption, cfg.caption_len));
    auto bits = data::character_presence(caption, characters);
    auto [pos, neg] = build_char_prompts(bits);
    presence.push_back(std::move(pos));
    complement.push_back(std::move(neg));
  }

  const ad::Tensor story_ctx = model.build_context(caption_ids);
  const ad::Tensor null_ctx = guide ? model.null_context() : ad::Tensor();
  const ad::Tensor contexts = guide ? ad::concat_rows({story_ctx, null_ctx}) : story_ctx;

  std::vector<DecodeState> states;
  std::vector<RngStream> frame_rng;
  for (int f = 0; f < frames; ++f) {
    states.push_back(init_decode_state(n, cfg.mask_token(), options.steps));
    frame_rng.push_back(rng.fork(static_cast<uint64_t>(f)));
  }

  // guidance materializes only when the combination actually differs from
  // the text-conditional path
  const bool extra_prompts = guide && options.guidance.lambda != 0.0;
  const int prompts = extra_prompts ? 3 : 1;

  for (int t = 0; t < options.steps; ++t) {
    std::vector<model::SampleInput> inputs;
    std::vector<int> ctx_of;
    for (int f = 0; f < frames; ++f) {
      model::SampleInput tc;
      tc.grid = &states[static_cast<size_t>(f)].canvas;
      tc.caption = &caption_ids[static_cast<size_t>(f)];
      tc.presence = cfg.char_embeddings ? &presence[static_cast<size_t>(f)] : nullptr;
      inputs.push_back(tc);
      ctx_of.push_back(0);
      if (extra_prompts) {
        model::SampleInput pos = tc;
        pos.drop_text = true;
        inputs.push_back(pos);
        ctx_of.push_back(1);
        model::SampleInput neg = pos;
        neg.presence = &complement[static_cast<size_t>(f)];
        inputs.push_back(neg);
        ctx_of.push_back(1);
      }
    }

    const int batch = static_cast<int>(inputs.size());
    ad::Tensor batch_seq = model.build_batch(inputs);
    ad::Tensor logits = model.forward(batch_seq, batch, contexts, ctx_of);

    const int s = cfg.seq_len();
    auto visual_rows = [&](int sample) {
      const double* base = logits.data().data() + static_cast<size_t>(sample) * s * k;
      return std::vector<double>(base, base + static_cast<size_t>(n) * k);
    };
    for (int f = 0; f < frames; ++f) {
      std::vector<double> combined;
      if (extra_prompts) {
        combined = combine_logits(options.guidance, visual_rows(f * prompts),
                                  visual_rows(f * prompts + 1), visual_rows(f * prompts + 2));
      } else {
        combined = visual_rows(f * prompts);
      }
      decode_step_with_logits(states[static_cast<size_t>(f)], combined, k, cfg.mask_token(),
                              options, frame_rng[static_cast<size_t>(f)]);
    }
  }

  StoryDecodeResult result;
  for (int f = 0; f < frames; ++f) {
    if (states[static_cast<size_t>(f)].masked_count() != 0)
      throw std::runtime_error("decode_story: schedule left masked tokens after the final step");
    result.grids.push_back(states[static_cast<size_t>(f)].canvas);
  }
  result.images = tokenizer.decode(result.grids);
  return result;
}

}  // namespace storygen::infer
