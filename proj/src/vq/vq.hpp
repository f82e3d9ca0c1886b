#pragma once

#include <filesystem>
#include <vector>

#include "ad/optim.hpp"
#include "ad/tensor.hpp"
#include "core/rng.hpp"

namespace storygen::vq {

struct VqConfig {
  int image_size = 32;     // H, pixels per side
  int downsample = 4;      // f, power of two
  int codebook_size = 32;  // K
  int latent_dim = 16;     // D
  int channels = 32;       // encoder/decoder width

  int grid_side() const { return image_size / downsample; }
  int tokens_per_image() const { return grid_side() * grid_side(); }
  void validate() const;
};

struct VqTrainStats {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_recon_mse;
  std::vector<int64_t> final_usage;  // per codebook entry, over the last epoch
  int64_t used_entries() const;
};

// Discrete image tokenizer: a stride-f patch encoder with pointwise
// layers, nearest-neighbor quantizer over a learned codebook, mirrored
// transposed-conv decoder. Each latent cell depends only on its own f x f
// patch, which keeps quantization decisions stable under re-encoding.
// Trained with reconstruction + codebook + 0.25 commitment losses and a
// straight-through estimator through the quantizer.
class VqTokenizer {
 public:
  VqTokenizer(VqConfig config, uint64_t init_seed);

  const VqConfig& config() const { return config_; }
  bool trained() const { return trained_; }

  // images are planar [0,1] floats (3, H, H); one token grid per image
  std::vector<std::vector<int>> encode(const std::vector<std::vector<double>>& images) const;
  // nearest codebook row per D-vector; ties resolve to the lowest index
  std::pair<std::vector<int>, std::vector<double>> quantize(
      const std::vector<double>& latent_rows) const;
  std::vector<std::vector<double>> decode(const std::vector<std::vector<int>>& grids) const;

  VqTrainStats train(const std::vector<std::vector<double>>& images, int epochs, double lr,
                     int batch_size, RngStream& rng);

  void save(const std::filesystem::path& path) const;
  static VqTokenizer load(const std::filesystem::path& path);

  ad::ParameterStore& parameters() { return params_; }
  const ad::Tensor& codebook() const { return codebook_; }

 private:
  ad::Tensor encode_latent_rows(const ad::Tensor& images_nchw) const;  // [B*N, D]
  ad::Tensor decode_latent_rows(const ad::Tensor& latent_rows, int batch) const;

  VqConfig config_;
  ad::ParameterStore params_;
  ad::Tensor codebook_;
  bool trained_ = false;
};

}  // namespace storygen::vq
