#include "eval/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "core/checkpoint.hpp"

namespace storygen::eval {

using ad::Tensor;

CharClassifier::CharClassifier(ClassifierConfig config, uint64_t init_seed) : config_(config) {
  if (config_.image_size % 8 != 0)
    throw std::invalid_argument("classifier: image size must be divisible by 8");
  RngStream rng = RngStream(init_seed).split("classifier-init");
  const int c = config_.channels;

  auto init_conv = [&](const std::string& name, int out_c, int in_c, int k) {
    const double sigma = std::sqrt(2.0 / (in_c * k * k));
    params_.create_normal(name + ".w", {out_c, in_c, k, k}, rng, sigma);
    params_.create_constant(name + ".b", {out_c}, 0.0);
  };
  init_conv("conv0", c, 3, 4);
  init_conv("conv1", 2 * c, c, 4);
  init_conv("conv2", 2 * c, 2 * c, 4);

  const int flat = 2 * c * (config_.image_size / 8) * (config_.image_size / 8);
  params_.create_normal("fc1.w", {flat, config_.feature_dim}, rng, std::sqrt(2.0 / flat));
  params_.create_constant("fc1.b", {1, config_.feature_dim}, 0.0);
  params_.create_normal("fc2.w", {config_.feature_dim, config_.n_chars}, rng,
                        std::sqrt(2.0 / config_.feature_dim));
  params_.create_constant("fc2.b", {1, config_.n_chars}, 0.0);
}

Tensor CharClassifier::forward_features(const Tensor& images) const {
  Tensor x = ad::gelu(ad::conv2d(images, params_.get("conv0.w"), params_.get("conv0.b"), 2, 1));
  x = ad::gelu(ad::conv2d(x, params_.get("conv1.w"), params_.get("conv1.b"), 2, 1));
  x = ad::gelu(ad::conv2d(x, params_.get("conv2.w"), params_.get("conv2.b"), 2, 1));
  const int batch = x.dim(0);
  const int flat = x.dim(1) * x.dim(2) * x.dim(3);
  x = ad::reshape(x, {batch, flat});
  Tensor h = ad::matmul(x, params_.get("fc1.w"));
  h = ad::add_tiled(h, params_.get("fc1.b"), batch);
  return ad::gelu(h);
}

Tensor CharClassifier::forward_logits(const Tensor& features) const {
  Tensor y = ad::matmul(features, params_.get("fc2.w"));
  return ad::add_tiled(y, params_.get("fc2.b"), features.dim(0));
}

Tensor CharClassifier::batch_tensor(const std::vector<std::vector<double>>& frames, size_t start,
                                    size_t count) const {
  const int h = config_.image_size;
  const size_t pixels = static_cast<size_t>(3) * h * h;
  std::vector<double> buf;
  buf.reserve(count * pixels);
  for (size_t i = 0; i < count; ++i) {
    if (frames[start + i].size() != pixels)
      throw std::invalid_argument("classifier: frame buffer does not match configured size");
    buf.insert(buf.end(), frames[start + i].begin(), frames[start + i].end());
  }
  return Tensor::from({static_cast<int>(count), 3, h, h}, std::move(buf));
}

std::vector<std::vector<double>> CharClassifier::predict(
    const std::vector<std::vector<double>>& frames) const {
  ad::NoGradGuard no_grad;
  std::vector<std::vector<double>> out;
  out.reserve(frames.size());
  constexpr size_t kBatch = 128;
  for (size_t start = 0; start < frames.size(); start += kBatch) {
    const size_t count = std::min(kBatch, frames.size() - start);
    Tensor probs = ad::sigmoid(forward_logits(forward_features(batch_tensor(frames, start, count))));
    for (size_t i = 0; i < count; ++i)
      out.emplace_back(probs.data().begin() + static_cast<long>(i) * config_.n_chars,
                       probs.data().begin() + static_cast<long>(i + 1) * config_.n_chars);
  }
  return out;
}

std::vector<std::vector<uint8_t>> CharClassifier::predict_presence(
    const std::vector<std::vector<double>>& frames, double threshold) const {
  auto probs = predict(frames);
  std::vector<std::vector<uint8_t>> out(probs.size());
  for (size_t i = 0; i < probs.size(); ++i) {
    out[i].resize(probs[i].size());
    for (size_t c = 0; c < probs[i].size(); ++c) out[i][c] = probs[i][c] > threshold ? 1 : 0;
  }
  return out;
}

std::vector<std::vector<double>> CharClassifier::features(
    const std::vector<std::vector<double>>& frames) const {
  ad::NoGradGuard no_grad;
  std::vector<std::vector<double>> out;
  out.reserve(frames.size());
  constexpr size_t kBatch = 128;
  for (size_t start = 0; start < frames.size(); start += kBatch) {
    const size_t count = std::min(kBatch, frames.size() - start);
    Tensor feats = forward_features(batch_tensor(frames, start, count));
    for (size_t i = 0; i < count; ++i)
      out.emplace_back(feats.data().begin() + static_cast<long>(i) * config_.feature_dim,
                       feats.data().begin() + static_cast<long>(i + 1) * config_.feature_dim);
  }
  return out;
}

namespace {

double micro_f1(const std::vector<std::vector<uint8_t>>& predicted,
                const std::vector<std::vector<uint8_t>>& truth) {
  int64_t tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < predicted.size(); ++i)
    for (size_t c = 0; c < predicted[i].size(); ++c) {
      const bool p = predicted[i][c] != 0, t = truth[i][c] != 0;
      tp += (p && t) ? 1 : 0;
      fp += (p && !t) ? 1 : 0;
      fn += (!p && t) ? 1 : 0;
    }
  const double denom = static_cast<double>(2 * tp + fp + fn);
  return denom > 0 ? 2.0 * static_cast<double>(tp) / denom : 1.0;
}

}  // namespace

CharClassifier::TrainResult CharClassifier::train(const std::vector<std::vector<double>>& frames,
                                                  const std::vector<std::vector<uint8_t>>& labels,
                                                  int epochs, double lr, int batch_size,
                                                  double holdout_fraction, double gate_f1,
                                                  RngStream& rng) {
  if (frames.empty() || frames.size() != labels.size())
    throw std::invalid_argument("classifier train: need one label row per frame");

  std::vector<int> order(frames.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  const size_t holdout =
      std::max<size_t>(1, static_cast<size_t>(holdout_fraction * static_cast<double>(frames.size())));
  const size_t train_count = frames.size() - holdout;

  ad::AdamSettings adam;
  adam.lr = lr;
  TrainResult result;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    RngStream epoch_rng = rng.fork(static_cast<uint64_t>(epoch));
    std::vector<int> epoch_order(order.begin(), order.begin() + static_cast<long>(train_count));
    epoch_rng.shuffle(epoch_order);

    double loss_sum = 0;
    int batches = 0;
    for (size_t start = 0; start < epoch_order.size(); start += static_cast<size_t>(batch_size)) {
      const size_t count = std::min(static_cast<size_t>(batch_size), epoch_order.size() - start);
      std::vector<std::vector<double>> batch_frames;
      std::vector<double> targets;
      batch_frames.reserve(count);
      for (size_t i = 0; i < count; ++i) {
        const auto idx = static_cast<size_t>(epoch_order[start + i]);
        batch_frames.push_back(frames[idx]);
        for (uint8_t bit : labels[idx]) targets.push_back(bit ? 1.0 : 0.0);
      }
      Tensor logits = forward_logits(forward_features(batch_tensor(batch_frames, 0, count)));
      Tensor loss = ad::bce_with_logits(logits, targets);
      const double value = loss.item();
      if (!std::isfinite(value))
        throw std::runtime_error("classifier train: loss diverged at epoch " +
                                 std::to_string(epoch));
      loss.backward();
      params_.fill_missing_grads();
      params_.adam_step(adam);
      loss_sum += value;
      ++batches;
    }
    result.epoch_loss.push_back(loss_sum / std::max(batches, 1));
  }

  std::vector<std::vector<double>> holdout_frames;
  std::vector<std::vector<uint8_t>> holdout_labels;
  for (size_t i = train_count; i < order.size(); ++i) {
    holdout_frames.push_back(frames[static_cast<size_t>(order[i])]);
    holdout_labels.push_back(labels[static_cast<size_t>(order[i])]);
  }
  result.holdout_f1 = micro_f1(predict_presence(holdout_frames), holdout_labels);
  result.gate_passed = result.holdout_f1 >= gate_f1;
  gate_passed_ = result.gate_passed;
  holdout_f1_ = result.holdout_f1;
  return result;
}

void CharClassifier::save(const std::filesystem::path& path) const {
  Checkpoint ck;
  ck.component = "char-classifier";
  ck.meta["image_size"] = std::to_string(config_.image_size);
  ck.meta["n_chars"] = std::to_string(config_.n_chars);
  ck.meta["channels"] = std::to_string(config_.channels);
  ck.meta["feature_dim"] = std::to_string(config_.feature_dim);
  ck.meta["gate_passed"] = gate_passed_ ? "1" : "0";
  ck.meta["holdout_f1"] = std::to_string(holdout_f1_);
  ck.arrays = params_.export_arrays();
  save_checkpoint(path, ck);
}

CharClassifier CharClassifier::load(const std::filesystem::path& path) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.component != "char-classifier")
    throw std::runtime_error("classifier load: checkpoint holds component '" + ck.component + "'");
  ClassifierConfig config;
  config.image_size = std::stoi(ck.meta.at("image_size"));
  config.n_chars = std::stoi(ck.meta.at("n_chars"));
  config.channels = std::stoi(ck.meta.at("channels"));
  config.feature_dim = std::stoi(ck.meta.at("feature_dim"));
  CharClassifier cls(config, /*init_seed=*/0);
  cls.params_.import_arrays(ck.arrays);
  cls.gate_passed_ = ck.meta_or("gate_passed", "0") == "1";
  cls.holdout_f1_ = std::stod(ck.meta_or("holdout_f1", "0"));
  return cls;
}

}  // namespace storygen::eval
