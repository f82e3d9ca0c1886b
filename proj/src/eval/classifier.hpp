#pragma once

#include <filesystem>
#include <vector>

#include "ad/optim.hpp"
#include "ad/tensor.hpp"
#include "core/rng.hpp"

namespace storygen::eval {

struct ClassifierConfig {
  int image_size = 32;
  int n_chars = 9;
  int channels = 16;
  int feature_dim = 64;
};

// Small convolutional multi-label classifier over synthetic frames. One
// sigmoid output per character; the penultimate activations double as the
// feature embedding for the Fréchet distance. Trained on ground-truth
// frames, then frozen before it ever scores generated ones.
class CharClassifier {
 public:
  CharClassifier(ClassifierConfig config, uint64_t init_seed);

  const ClassifierConfig& config() const { return config_; }
  bool gate_passed() const { return gate_passed_; }
  double holdout_f1() const { return holdout_f1_; }

  // probabilities in (0,1), one row per frame (planar [0,1] floats)
  std::vector<std::vector<double>> predict(const std::vector<std::vector<double>>& frames) const;
  std::vector<std::vector<uint8_t>> predict_presence(
      const std::vector<std::vector<double>>& frames, double threshold = 0.5) const;
  std::vector<std::vector<double>> features(const std::vector<std::vector<double>>& frames) const;

  struct TrainResult {
    std::vector<double> epoch_loss;
    double holdout_f1 = 0;
    bool gate_passed = false;
  };
  // Trains with binary cross-entropy and gates on held-out micro-F1; the
  // metric harness refuses classifiers that miss the gate.
  TrainResult train(const std::vector<std::vector<double>>& frames,
                    const std::vector<std::vector<uint8_t>>& labels, int epochs, double lr,
                    int batch_size, double holdout_fraction, double gate_f1, RngStream& rng);

  void save(const std::filesystem::path& path) const;
  static CharClassifier load(const std::filesystem::path& path);

 private:
  ad::Tensor forward_features(const ad::Tensor& images) const;  // [B, feature_dim]
  ad::Tensor forward_logits(const ad::Tensor& features) const;  // [B, n_chars]
  ad::Tensor batch_tensor(const std::vector<std::vector<double>>& frames, size_t start,
                          size_t count) const;

  ClassifierConfig config_;
  ad::ParameterStore params_;
  bool gate_passed_ = false;
  double holdout_f1_ = 0;
};

}  // namespace storygen::eval
