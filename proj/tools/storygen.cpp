// Command-line front end for the story-visualization pipeline: synthetic
// data, tokenizer/transformer training, guided generation, metrics and
// caption augmentation. One subcommand per process; every run writes a
// resolved-config snapshot next to its outputs.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <iostream>

#include "ad/gradcheck.hpp"
#include "augment/augment.hpp"
#include "bpe/bpe.hpp"
#include "cli/render.hpp"
#include "core/config.hpp"
#include "core/io.hpp"
#include "data/story.hpp"
#include "data/synthetic.hpp"
#include "eval/classifier.hpp"
#include "eval/metrics.hpp"
#include "inference/decode.hpp"
#include "model/transformer.hpp"
#include "training/train.hpp"
#include "vq/vq.hpp"

using namespace storygen;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  uint64_t seed = 0;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_out = true) {
  cmd->add_option("--config", args.config_path, "key=value config file");
  cmd->add_option("--set", args.overrides, "override, e.g. --set train.epochs=10");
  cmd->add_option("--seed", args.seed, "root random seed");
  if (with_out) cmd->add_option("--out", args.out_dir, "output directory")->required();
}

Config resolve_config(const CommonArgs& args) {
  Config cfg = args.config_path.empty() ? Config() : Config::from_file(args.config_path);
  for (const auto& o : args.overrides) cfg.set_override(o);
  cfg.set("seed", std::to_string(args.seed));
  return cfg;
}

void write_snapshot(const Config& cfg, const fs::path& out_dir) {
  ensure_directory(out_dir);
  write_text_file(out_dir / "config.resolved.txt", cfg.resolved_snapshot());
}

data::SyntheticConfig synthetic_config(const Config& cfg, uint64_t seed) {
  data::SyntheticConfig sc;
  sc.n_characters = cfg.get_int("data.characters", sc.n_characters);
  sc.image_size = cfg.get_int("data.image_size", sc.image_size);
  sc.n_backgrounds = cfg.get_int("data.backgrounds", sc.n_backgrounds);
  sc.frames_per_story = cfg.get_int("data.frames", sc.frames_per_story);
  sc.train_stories = cfg.get_int("data.train_stories", sc.train_stories);
  sc.val_stories = cfg.get_int("data.val_stories", sc.val_stories);
  sc.test_stories = cfg.get_int("data.test_stories", sc.test_stories);
  sc.max_chars_per_frame = cfg.get_int("data.max_chars_per_frame", sc.max_chars_per_frame);
  sc.seed = seed;
  return sc;
}

vq::VqConfig vq_config(const Config& cfg, int image_size) {
  vq::VqConfig vc;
  vc.image_size = image_size;
  vc.downsample = cfg.get_int("vq.downsample", vc.downsample);
  vc.codebook_size = cfg.get_int("vq.codebook", vc.codebook_size);
  vc.latent_dim = cfg.get_int("vq.latent_dim", vc.latent_dim);
  vc.channels = cfg.get_int("vq.channels", vc.channels);
  return vc;
}

model::ModelConfig model_config(const Config& cfg, const vq::VqConfig& vc, int frames,
                                int n_chars, int text_vocab) {
  model::ModelConfig mc;
  mc.d = cfg.get_int("model.d", mc.d);
  mc.n_full = cfg.get_int("model.full_layers", mc.n_full);
  mc.n_self = cfg.get_int("model.self_layers", mc.n_self);
  mc.n_head = cfg.get_int("model.heads", mc.n_head);
  mc.ffn_mult = cfg.get_int("model.ffn_mult", mc.ffn_mult);
  mc.char_embeddings = cfg.get_bool("model.char_embeddings", mc.char_embeddings);
  mc.k_visual = vc.codebook_size;
  mc.visual_len = vc.tokens_per_image();
  mc.caption_len = cfg.get_int("bpe.caption_len", 32);
  mc.n_chars = n_chars;
  mc.n_frames = frames;
  mc.text_vocab = text_vocab;
  return mc;
}

infer::DecodeOptions decode_options(const Config& cfg) {
  infer::DecodeOptions opts;
  opts.steps = cfg.get_int("infer.steps", 20);
  opts.sample_temperature = cfg.get_real("infer.sample_temperature", 1.0);
  opts.confidence_noise = cfg.get_real("infer.confidence_noise", 1.0);
  opts.guidance.lambda = cfg.get_real("infer.lambda", 0.2);
  opts.guidance.positive_enabled = cfg.get_bool("infer.positive", true);
  opts.guidance.negative_enabled = cfg.get_bool("infer.negative", true);
  return opts;
}

eval::CharClassifier load_or_train_classifier(const fs::path& path, const Config& cfg,
                                              const fs::path& data_dir, uint64_t seed) {
  if (fs::exists(path)) {
    auto cls = eval::CharClassifier::load(path);
    if (!cls.gate_passed())
      throw std::runtime_error("classifier at " + path.string() +
                               " missed its validation gate; retrain before evaluating");
    return cls;
  }
  std::cerr << "training character classifier (missing at " << path.string() << ")\n";
  data::Dataset train_split = data::load_dataset(data_dir, "train");
  std::vector<std::vector<double>> frames;
  std::vector<std::vector<uint8_t>> labels;
  for (const auto& story : train_split.stories)
    for (size_t f = 0; f < story.frames.size(); ++f) {
      frames.push_back(data::frame_to_chw(story.frames[f]));
      labels.push_back(story.presence[f]);
    }
  eval::ClassifierConfig cc;
  cc.image_size = train_split.image_size;
  cc.n_chars = train_split.characters.count();
  cc.channels = cfg.get_int("eval.channels", cc.channels);
  cc.feature_dim = cfg.get_int("eval.feature_dim", cc.feature_dim);
  eval::CharClassifier cls(cc, seed);
  RngStream rng = RngStream(seed).split("classifier-train");
  auto result = cls.train(frames, labels, cfg.get_int("eval.epochs", 8),
                          cfg.get_real("eval.lr", 1e-3), cfg.get_int("eval.batch", 32),
                          cfg.get_real("eval.holdout", 0.15), cfg.get_real("eval.gate", 0.95), rng);
  std::cerr << "classifier holdout F1 " << result.holdout_f1 << "\n";
  if (!result.gate_passed)
    throw std::runtime_error("classifier failed its holdout gate (F1 " +
                             std::to_string(result.holdout_f1) + " < required)");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  cls.save(path);
  return cls;
}

// ---- subcommands -----------------------------------------------------------

int cmd_synth_data(const CommonArgs& args) {
  Config cfg = resolve_config(args);
  write_snapshot(cfg, args.out_dir);
  data::generate_synthetic(synthetic_config(cfg, args.seed), args.out_dir);
  std::cout << "dataset written to " << args.out_dir << "\n";
  return 0;
}

int cmd_train_vq(const CommonArgs& args, const std::string& data_dir) {
  Config cfg = resolve_config(args);
  write_snapshot(cfg, args.out_dir);
  data::Dataset ds = data::load_dataset(data_dir, "train");
  std::vector<std::vector<double>> frames;
  for (const auto& story : ds.stories)
    for (const auto& frame : story.frames) frames.push_back(data::frame_to_chw(frame));

  vq::VqTokenizer tokenizer(vq_config(cfg, ds.image_size), args.seed);
  RngStream rng = RngStream(args.seed).split("vq-train");
  auto stats = tokenizer.train(frames, cfg.get_int("vq.epochs", 30), cfg.get_real("vq.lr", 1e-3),
                               cfg.get_int("vq.batch", 32), rng);
  tokenizer.save(fs::path(args.out_dir) / "vq.ckpt");

  std::ostringstream lines;
  for (size_t e = 0; e < stats.epoch_loss.size(); ++e) {
    json record;
    record["epoch"] = e;
    record["loss"] = stats.epoch_loss[e];
    record["recon_mse"] = stats.epoch_recon_mse[e];
    lines << record.dump() << "\n";
  }
  write_text_file(fs::path(args.out_dir) / "train_stats.jsonl", lines.str());
  std::cout << "tokenizer trained: final recon mse "
            << (stats.epoch_recon_mse.empty() ? 0.0 : stats.epoch_recon_mse.back())
            << ", codebook usage " << stats.used_entries() << "/"
            << tokenizer.config().codebook_size << "\n";
  return 0;
}

int cmd_train_model(const CommonArgs& args, const std::string& data_dir,
                    const std::string& vq_path, const std::string& sidecar) {
  Config cfg = resolve_config(args);
  write_snapshot(cfg, args.out_dir);
  data::Dataset ds = data::load_dataset(data_dir, "train");
  if (!sidecar.empty()) data::attach_sidecar(ds, sidecar);
  vq::VqTokenizer tokenizer = vq::VqTokenizer::load(vq_path);
  if (ds.image_size != tokenizer.config().image_size)
    throw std::runtime_error("dataset image size does not match the tokenizer checkpoint");

  std::vector<std::string> corpus;
  for (const auto& story : ds.stories) {
    for (const auto& caption : story.captions) corpus.push_back(caption);
    for (const auto& caption : story.aug_captions)
      if (!caption.empty()) corpus.push_back(caption);
  }
  bpe::BpeVocab vocab = bpe::BpeVocab::train(corpus, cfg.get_int("bpe.vocab", 200));
  vocab.save(fs::path(args.out_dir) / "bpe.vocab");

  model::ModelConfig mc = model_config(cfg, tokenizer.config(), ds.frames_per_story,
                                       ds.characters.count(), vocab.total_vocab());
  model::StoryTransformer transformer(mc, args.seed);

  train::TrainConfig tc;
  tc.lr = cfg.get_real("train.lr", 1e-3);
  tc.epochs = cfg.get_int("train.epochs", 50);
  tc.batch_stories = cfg.get_int("train.batch_stories", 4);
  tc.text_drop_rate = cfg.get_real("train.text_drop", 0.2);
  tc.guidance_training = cfg.get_bool("train.guidance_training", true) && mc.char_embeddings;
  tc.augmentation = cfg.get_bool("train.augmentation", false);
  tc.seed = args.seed;

  std::cerr << "encoding training frames\n";
  auto prepared = train::prepare_dataset(ds, tokenizer, vocab, mc.caption_len);
  RngStream rng = RngStream(args.seed).split("train");

  std::ostringstream lines;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    auto stats = train::train_epoch(transformer, prepared, tc, epoch, rng);
    json record;
    record["epoch"] = stats.epoch;
    record["loss"] = stats.loss;
    record["drop_rate"] = stats.drop_rate;
    record["original_caption_rate"] = stats.original_caption_rate;
    record["wall_time"] = stats.wall_seconds;
    lines << record.dump() << "\n";
    std::cerr << "epoch " << epoch << " loss " << stats.loss << " drop " << stats.drop_rate
              << " (" << stats.wall_seconds << "s)\n";
  }
  write_text_file(fs::path(args.out_dir) / "train_stats.jsonl", lines.str());
  transformer.save(fs::path(args.out_dir) / "model.ckpt");
  std::cout << "model written to " << (fs::path(args.out_dir) / "model.ckpt").string() << "\n";
  return 0;
}

struct GenerationInputs {
  data::Dataset dataset;
  vq::VqTokenizer tokenizer;
  bpe::BpeVocab vocab;
  model::StoryTransformer transformer;
};

GenerationInputs load_generation_inputs(const std::string& data_dir, const std::string& split,
                                        const std::string& model_dir, const std::string& vq_path) {
  return GenerationInputs{
      data::load_dataset(data_dir, split), vq::VqTokenizer::load(vq_path),
      bpe::BpeVocab::load(fs::path(model_dir) / "bpe.vocab"),
      model::StoryTransformer::load(fs::path(model_dir) / "model.ckpt")};
}

int run_generation(const Config& cfg, const GenerationInputs& inputs, const std::string& split,
                   int story_limit, uint64_t seed, const infer::DecodeOptions& opts,
                   const fs::path& out_dir) {
  ensure_directory(out_dir);
  const auto& ds = inputs.dataset;
  const int count = story_limit > 0
                        ? std::min<int>(story_limit, static_cast<int>(ds.stories.size()))
                        : static_cast<int>(ds.stories.size());

  RngStream root = RngStream(seed).split("generate");
  std::ostringstream records;
  for (int s = 0; s < count; ++s) {
    const auto& story = ds.stories[static_cast<size_t>(s)];
    RngStream rng = root.fork(static_cast<uint64_t>(s));
    auto result = infer::decode_story(inputs.transformer, inputs.tokenizer, inputs.vocab,
                                      story.captions, ds.characters, opts, rng);
    cli::render_frame_grid({result.images}, {story.captions}, ds.image_size,
                           out_dir / (story.story_id + "_grid.png"));
    json record;
    record["story_id"] = story.story_id;
    record["split"] = split;
    record["captions"] = story.captions;
    record["token_grids"] = result.grids;
    record["seed"] = seed;
    record["lambda"] = opts.guidance.enabled() ? opts.guidance.lambda : 0.0;
    record["steps"] = opts.steps;
    records << record.dump() << "\n";
  }
  write_text_file(out_dir / "records.jsonl", records.str());
  (void)cfg;
  return count;
}

int cmd_generate(const CommonArgs& args, const std::string& data_dir,
                 const std::string& model_dir, const std::string& vq_path,
                 const std::string& split, int stories) {
  Config cfg = resolve_config(args);
  write_snapshot(cfg, args.out_dir);
  auto inputs = load_generation_inputs(data_dir, split, model_dir, vq_path);
  const int count = run_generation(cfg, inputs, split, stories, args.seed, decode_options(cfg),
                                   args.out_dir);
  std::cout << "generated " << count << " stories into " << args.out_dir << "\n";
  return 0;
}

eval::MetricsReport evaluate_records(const fs::path& records_path, const data::Dataset& ds,
                                     const vq::VqTokenizer& tokenizer,
                                     const eval::CharClassifier& classifier, bool continuation) {
  std::map<std::string, const data::StorySample*> by_id;
  for (const auto& story : ds.stories) by_id[story.story_id] = &story;

  std::vector<std::vector<std::vector<int>>> story_grids;
  std::vector<const data::StorySample*> story_refs;
  std::istringstream in(read_text_file(records_path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json record = json::parse(line);
    const std::string id = record.at("story_id").get<std::string>();
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw std::runtime_error("evaluate: generated story '" + id + "' not in the dataset split");
    story_grids.push_back(record.at("token_grids").get<std::vector<std::vector<int>>>());
    story_refs.push_back(it->second);
  }
  if (story_refs.empty()) throw std::runtime_error("evaluate: no generation records found");

  // per-story frame lists so the continuation filter can drop first frames
  std::vector<std::vector<std::vector<double>>> generated, reference;
  std::vector<std::vector<std::vector<uint8_t>>> truth;
  for (size_t s = 0; s < story_refs.size(); ++s) {
    generated.push_back(tokenizer.decode(story_grids[s]));
    std::vector<std::vector<double>> ref_frames;
    for (const auto& frame : story_refs[s]->frames) ref_frames.push_back(data::frame_to_chw(frame));
    reference.push_back(std::move(ref_frames));
    truth.push_back(story_refs[s]->presence);
  }
  if (continuation) {
    generated = eval::story_continuation_filter(generated);
    reference = eval::story_continuation_filter(reference);
    truth = eval::story_continuation_filter(truth);
  }

  std::vector<std::vector<double>> gen_flat, ref_flat;
  std::vector<std::vector<uint8_t>> truth_flat;
  for (size_t s = 0; s < generated.size(); ++s) {
    for (auto& f : generated[s]) gen_flat.push_back(std::move(f));
    for (auto& f : reference[s]) ref_flat.push_back(std::move(f));
    for (auto& bits : truth[s]) truth_flat.push_back(bits);
  }

  auto predicted = classifier.predict_presence(gen_flat);
  auto char_result = eval::char_metrics(predicted, truth_flat);

  eval::MetricsReport report;
  report.char_f1 = char_result.f1;
  report.char_acc = char_result.accuracy;
  report.tp = char_result.tp;
  report.fp = char_result.fp;
  report.fn = char_result.fn;
  report.n_stories = static_cast<int>(generated.size());
  report.n_frames = static_cast<int>(gen_flat.size());
  report.ffd = eval::frechet_feature_distance(classifier.features(gen_flat),
                                              classifier.features(ref_flat));
  return report;
}

int cmd_evaluate(const CommonArgs& args, const std::string& data_dir, const std::string& gen_dir,
                 const std::string& vq_path, const std::string& classifier_path,
                 const std::string& split, bool continuation) {
  Config cfg = resolve_config(args);
  write_snapshot(cfg, args.out_dir);
  data::Dataset ds = data::load_dataset(data_dir, split);
  vq::VqTokenizer tokenizer = vq::VqTokenizer::load(vq_path);
  auto classifier = load_or_train_classifier(classifier_path, cfg, data_dir, args.seed);

  auto report = evaluate_records(fs::path(gen_dir) / "records.jsonl", ds, tokenizer, classifier,
                                 continuation);
  write_text_file(fs::path(args.out_dir) / "metrics.json", report.to_json() + "\n");
  std::cout << report.to_table();
  return 0;
}

int cmd_augment(const CommonArgs& args, const std::string& data_dir, const std::string& split,
                const std::string& mode, const std::string& fixture_dir,
                const aug::LlmEndpointConfig& endpoint) {
  Config cfg = resolve_config(args);
  data::Dataset ds = data::load_dataset(data_dir, split);

  std::unique_ptr<aug::Augmenter> augmenter;
  if (mode == "template") {
    augmenter = std::make_unique<aug::TemplateAugmenter>();
  } else if (mode == "fixture") {
    if (fixture_dir.empty()) throw std::runtime_error("augment: --fixture-dir required");
    augmenter = std::make_unique<aug::FixtureAugmenter>(fixture_dir);
  } else if (mode == "http") {
    augmenter = std::make_unique<aug::HttpAugmenter>(endpoint);
  } else {
    throw std::runtime_error("augment: unknown mode '" + mode + "'");
  }

  auto stats = aug::run_augmentation(ds, *augmenter, args.out_dir);
  std::cout << "stories: " << stats.stories_total << " augmented: " << stats.augmented
            << " skipped: " << stats.skipped_existing << " failed: " << stats.failed
            << " coverage: " << stats.coverage << "\n";
  (void)cfg;
  return stats.failed == 0 ? 0 : 1;
}

int cmd_gradcheck(const CommonArgs& args, int probes) {
  Config cfg = resolve_config(args);
  // the full desk-scale model: d=64, N=64, L=32, n_c=9
  vq::VqConfig vc = vq_config(cfg, cfg.get_int("data.image_size", 32));
  model::ModelConfig mc = model_config(cfg, vc, cfg.get_int("data.frames", 5),
                                       cfg.get_int("data.characters", 9), 120);
  model::StoryTransformer transformer(mc, args.seed);

  RngStream rng = RngStream(args.seed).split("gradcheck");
  std::vector<int> grid(static_cast<size_t>(mc.visual_len));
  std::vector<int> targets(static_cast<size_t>(mc.visual_len));
  for (auto& g : grid) g = rng.uniform_int(mc.k_visual);
  for (auto& t : targets) t = rng.uniform_int(mc.k_visual);
  std::vector<int> caption(static_cast<size_t>(mc.caption_len));
  for (auto& c : caption) c = rng.uniform_int(mc.text_vocab - 3);
  std::vector<uint8_t> presence(static_cast<size_t>(mc.n_chars));
  for (auto& b : presence) b = rng.bernoulli(0.4) ? 1 : 0;
  std::vector<std::vector<int>> story_captions;
  for (int f = 0; f < mc.n_frames; ++f) {
    std::vector<int> ids(static_cast<size_t>(mc.caption_len));
    for (auto& c : ids) c = rng.uniform_int(mc.text_vocab - 3);
    story_captions.push_back(ids);
  }
  auto mask = train::sample_mask(mc.visual_len, rng);
  auto masked_grid = grid;
  for (int p = 0; p < mc.visual_len; ++p)
    if (mask.bits[static_cast<size_t>(p)]) masked_grid[static_cast<size_t>(p)] = mc.mask_token();

  auto loss_fn = [&]() {
    auto input = transformer.build_input(masked_grid, caption, &presence);
    ad::Tensor ctx = transformer.build_context(story_captions);
    ad::Tensor logits = transformer.forward_single(input, ctx);
    return train::mvtm_loss(logits, 1, mc.seq_len(), mc.visual_len, targets, mask.bits);
  };
  std::vector<std::pair<std::string, ad::Tensor>> params;
  for (const auto& name : transformer.parameters().names())
    params.emplace_back(name, transformer.parameters().get(name));

  RngStream probe_rng = RngStream(args.seed).split("gradcheck-probes");
  auto report = ad::finite_difference_check(loss_fn, params, probes, probe_rng);
  std::cout << "gradcheck: " << report.coordinates_checked << " coordinates, max rel err "
            << report.max_rel_err << " (worst at " << report.worst_parameter << ")\n";
  const bool ok = report.passed(1e-4);
  std::cout << (ok ? "PASS" : "FAIL") << " (tolerance 1e-4)\n";
  return ok ? 0 : 1;
}

int cmd_sweep_lambda(const CommonArgs& args, const std::string& data_dir,
                     const std::string& model_dir, const std::string& vq_path,
                     const std::string& classifier_path, const std::string& split,
                     const std::string& values, int stories) {
  Config cfg = resolve_config(args);
  write_snapshot(cfg, args.out_dir);
  auto inputs = load_generation_inputs(data_dir, split, model_dir, vq_path);
  auto classifier = load_or_train_classifier(classifier_path, cfg, data_dir, args.seed);

  std::vector<double> lambdas;
  std::istringstream in(values);
  std::string token;
  while (std::getline(in, token, ',')) lambdas.push_back(std::stod(token));
  if (lambdas.empty()) throw std::runtime_error("sweep-lambda: no values given");

  json sweep = json::array();
  std::cout << "lambda    char_f1   char_acc       ffd\n";
  for (double lambda : lambdas) {
    infer::DecodeOptions opts = decode_options(cfg);
    opts.guidance.lambda = lambda;
    opts.guidance.positive_enabled = true;
    opts.guidance.negative_enabled = true;

    std::ostringstream dir_name;
    dir_name << "lambda_" << lambda;
    const fs::path run_dir = fs::path(args.out_dir) / dir_name.str();
    run_generation(cfg, inputs, split, stories, args.seed, opts, run_dir);
    auto report = evaluate_records(run_dir / "records.jsonl", inputs.dataset, inputs.tokenizer,
                                   classifier, false);
    char line[128];
    std::snprintf(line, sizeof line, "%6.2f %10.4f %10.4f %9.4f\n", lambda, report.char_f1,
                  report.char_acc, report.ffd);
    std::cout << line;
    json entry;
    entry["lambda"] = lambda;
    entry["char_f1"] = report.char_f1;
    entry["char_acc"] = report.char_acc;
    entry["ffd"] = report.ffd;
    sweep.push_back(entry);
  }
  write_text_file(fs::path(args.out_dir) / "sweep.json", sweep.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"story visualization pipeline"};
  app.require_subcommand(1);

  CommonArgs synth_args;
  auto* synth = app.add_subcommand("synth-data", "generate the synthetic story dataset");
  add_common(synth, synth_args);

  CommonArgs vq_args;
  std::string vq_data;
  auto* train_vq = app.add_subcommand("train-vq", "train the image tokenizer");
  add_common(train_vq, vq_args);
  train_vq->add_option("--data", vq_data, "dataset directory")->required();

  CommonArgs model_args;
  std::string model_data, model_vq, model_sidecar;
  auto* train_model = app.add_subcommand("train-model", "train the masked story transformer");
  add_common(train_model, model_args);
  train_model->add_option("--data", model_data, "dataset directory")->required();
  train_model->add_option("--vq", model_vq, "tokenizer checkpoint")->required();
  train_model->add_option("--sidecar", model_sidecar, "augmented-captions sidecar");

  CommonArgs gen_args;
  std::string gen_data, gen_model, gen_vq, gen_split = "test";
  int gen_stories = 0;
  auto* generate = app.add_subcommand("generate", "decode stories with the trained model");
  add_common(generate, gen_args);
  generate->add_option("--data", gen_data, "dataset directory")->required();
  generate->add_option("--model-dir", gen_model, "directory with model.ckpt + bpe.vocab")->required();
  generate->add_option("--vq", gen_vq, "tokenizer checkpoint")->required();
  generate->add_option("--split", gen_split, "dataset split");
  generate->add_option("--stories", gen_stories, "number of stories (0 = all)");

  CommonArgs eval_args;
  std::string eval_data, eval_gen, eval_vq, eval_cls, eval_split = "test";
  bool eval_continuation = false;
  auto* evaluate = app.add_subcommand("evaluate", "score generated stories");
  add_common(evaluate, eval_args);
  evaluate->add_option("--data", eval_data, "dataset directory")->required();
  evaluate->add_option("--gen", eval_gen, "generation output directory")->required();
  evaluate->add_option("--vq", eval_vq, "tokenizer checkpoint")->required();
  evaluate->add_option("--classifier", eval_cls, "classifier checkpoint (trained when missing)")
      ->required();
  evaluate->add_option("--split", eval_split, "dataset split");
  evaluate->add_flag("--continuation", eval_continuation,
                     "story-continuation scoring: drop the first frame per story");

  CommonArgs aug_args;
  std::string aug_data, aug_split = "train", aug_mode = "http", aug_fixtures;
  aug::LlmEndpointConfig endpoint;
  auto* augment = app.add_subcommand("augment", "augment captions via a chat-completion API");
  add_common(augment, aug_args);
  augment->add_option("--data", aug_data, "dataset directory")->required();
  augment->add_option("--split", aug_split, "dataset split");
  augment->add_option("--mode", aug_mode, "http | template | fixture");
  augment->add_option("--fixture-dir", aug_fixtures, "canned responses for fixture mode");
  augment->add_option("--base-url", endpoint.base_url, "chat-completion endpoint");
  augment->add_option("--model", endpoint.model, "model identifier");
  augment->add_option("--api-key-env", endpoint.api_key_env, "env var holding the API key");
  augment->add_option("--retries", endpoint.max_retries, "max retries");
  augment->add_option("--timeout", endpoint.timeout_seconds, "request timeout seconds");
  augment->add_option("--temperature", endpoint.temperature, "sampling temperature");

  CommonArgs grad_args;
  int grad_probes = 120;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the full model");
  add_common(gradcheck, grad_args, /*with_out=*/false);
  gradcheck->add_option("--probes", grad_probes, "coordinates to probe");

  CommonArgs sweep_args;
  std::string sweep_data, sweep_model, sweep_vq, sweep_cls, sweep_split = "test";
  std::string sweep_values = "0,0.2,0.4,0.6,0.8";
  int sweep_stories = 0;
  auto* sweep = app.add_subcommand("sweep-lambda", "metrics across guidance strengths");
  add_common(sweep, sweep_args);
  sweep->add_option("--data", sweep_data, "dataset directory")->required();
  sweep->add_option("--model-dir", sweep_model, "directory with model.ckpt + bpe.vocab")->required();
  sweep->add_option("--vq", sweep_vq, "tokenizer checkpoint")->required();
  sweep->add_option("--classifier", sweep_cls, "classifier checkpoint")->required();
  sweep->add_option("--split", sweep_split, "dataset split");
  sweep->add_option("--values", sweep_values, "comma-separated lambda values");
  sweep->add_option("--stories", sweep_stories, "stories per run (0 = all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << "\n" << e.what() << "\n";
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth_data(synth_args);
    if (train_vq->parsed()) return cmd_train_vq(vq_args, vq_data);
    if (train_model->parsed()) return cmd_train_model(model_args, model_data, model_vq, model_sidecar);
    if (generate->parsed())
      return cmd_generate(gen_args, gen_data, gen_model, gen_vq, gen_split, gen_stories);
    if (evaluate->parsed())
      return cmd_evaluate(eval_args, eval_data, eval_gen, eval_vq, eval_cls, eval_split,
                          eval_continuation);
    if (augment->parsed())
      return cmd_augment(aug_args, aug_data, aug_split, aug_mode, aug_fixtures, endpoint);
    if (gradcheck->parsed()) return cmd_gradcheck(grad_args, grad_probes);
    if (sweep->parsed())
      return cmd_sweep_lambda(sweep_args, sweep_data, sweep_model, sweep_vq, sweep_cls,
                              sweep_split, sweep_values, sweep_stories);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
