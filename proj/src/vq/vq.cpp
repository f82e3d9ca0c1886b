#include "vq/vq.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "core/checkpoint.hpp"

namespace storygen::vq {

using ad::Tensor;

void VqConfig::validate() const {
  if (codebook_size < 2) throw std::invalid_argument("vq config: codebook size must be >= 2");
  if (latent_dim < 1 || channels < 2) throw std::invalid_argument("vq config: bad widths");
  int f = downsample;
  if (f < 2 || (f & (f - 1)) != 0)
    throw std::invalid_argument("vq config: downsample factor must be a power of two >= 2");
  if (image_size % downsample != 0)
    throw std::invalid_argument("vq config: image size " + std::to_string(image_size) +
                                " not divisible by downsample factor " + std::to_string(downsample));
}

int64_t VqTrainStats::used_entries() const {
  int64_t used = 0;
  for (int64_t u : final_usage)
    if (u > 0) ++used;
  return used;
}

VqTokenizer::VqTokenizer(VqConfig config, uint64_t init_seed) : config_(config) {
  config_.validate();
  RngStream rng = RngStream(init_seed).split("vq-init");
  const int c = config_.channels, d = config_.latent_dim, f = config_.downsample;

  auto init_conv = [&](const std::string& name, int out_c, int in_c, int k) {
    const double sigma = std::sqrt(2.0 / (in_c * k * k));
    params_.create_normal(name + ".w", {out_c, in_c, k, k}, rng, sigma);
    params_.create_constant(name + ".b", {out_c}, 0.0);
  };

  init_conv("enc_patch", c, 3, f);  // stride-f patch embedding
  init_conv("enc_mix", c, c, 1);
  init_conv("enc_head", d, c, 1);
  init_conv("dec_head", c, d, 1);
  init_conv("dec_mix", c, c, 1);
  {  // transposed stride-f patch expansion, weight layout [Cin, Cout, k, k]
    const double sigma = std::sqrt(2.0 / (c * f * f));
    params_.create_normal("dec_patch.w", {c, 3, f, f}, rng, sigma);
    params_.create_constant("dec_patch.b", {3}, 0.0);
  }

  codebook_ = params_.create("codebook", {config_.codebook_size, config_.latent_dim});
  const double bound = 1.0 / config_.codebook_size;
  for (auto& v : codebook_.mutable_data()) v = (rng.uniform() * 2.0 - 1.0) * bound;
}

Tensor VqTokenizer::encode_latent_rows(const Tensor& images_nchw) const {
  const int f = config_.downsample;
  Tensor x = ad::gelu(ad::conv2d(images_nchw, params_.get("enc_patch.w"),
                                 params_.get("enc_patch.b"), f, 0));
  x = ad::gelu(ad::conv2d(x, params_.get("enc_mix.w"), params_.get("enc_mix.b"), 1, 0));
  x = ad::conv2d(x, params_.get("enc_head.w"), params_.get("enc_head.b"), 1, 0);
  return ad::nchw_to_rows(x);
}

Tensor VqTokenizer::decode_latent_rows(const Tensor& latent_rows, int batch) const {
  const int side = config_.grid_side();
  const int f = config_.downsample;
  Tensor x = ad::rows_to_nchw(latent_rows, batch, config_.latent_dim, side, side);
  x = ad::gelu(ad::conv2d(x, params_.get("dec_head.w"), params_.get("dec_head.b"), 1, 0));
  x = ad::gelu(ad::conv2d(x, params_.get("dec_mix.w"), params_.get("dec_mix.b"), 1, 0));
  x = ad::conv2d_transpose(x, params_.get("dec_patch.w"), params_.get("dec_patch.b"), f, 0);
  return ad::sigmoid(x);
}

std::pair<std::vector<int>, std::vector<double>> VqTokenizer::quantize(
    const std::vector<double>& latent_rows) const {
  const int d = config_.latent_dim;
  if (latent_rows.size() % static_cast<size_t>(d) != 0)
    throw std::invalid_argument("quantize: latent buffer is not a multiple of the latent dim");
  const size_t rows = latent_rows.size() / static_cast<size_t>(d);
  const auto& entries = codebook_.data();
  const int k = config_.codebook_size;

  std::vector<int> indices(rows);
  std::vector<double> quantized(latent_rows.size());
  for (size_t r = 0; r < rows; ++r) {
    const double* v = latent_rows.data() + r * static_cast<size_t>(d);
    int best = 0;
    double best_dist = 0;
    for (int j = 0; j < d; ++j) {
      const double diff = v[j] - entries[static_cast<size_t>(j)];
      best_dist += diff * diff;
    }
    for (int e = 1; e < k; ++e) {
      const double* row = entries.data() + static_cast<size_t>(e) * d;
      double dist = 0;
      for (int j = 0; j < d; ++j) {
        const double diff = v[j] - row[j];
        dist += diff * diff;
        if (dist >= best_dist) break;
      }
      if (dist < best_dist) {
        best_dist = dist;
        best = e;
      }
    }
    indices[r] = best;
    std::copy(entries.data() + static_cast<size_t>(best) * d,
              entries.data() + static_cast<size_t>(best + 1) * d,
              quantized.data() + r * static_cast<size_t>(d));
  }
  return {std::move(indices), std::move(quantized)};
}

std::vector<std::vector<int>> VqTokenizer::encode(
    const std::vector<std::vector<double>>& images) const {
  if (!trained_) throw std::runtime_error("vq encode: tokenizer has not been trained");
  const int h = config_.image_size;
  const size_t pixels = static_cast<size_t>(3) * h * h;
  for (const auto& img : images)
    if (img.size() != pixels)
      throw std::invalid_argument("vq encode: image buffer does not match configured size");

  ad::NoGradGuard no_grad;
  const int n = config_.tokens_per_image();
  std::vector<std::vector<int>> grids;
  grids.reserve(images.size());
  constexpr size_t kBatch = 64;
  for (size_t start = 0; start < images.size(); start += kBatch) {
    const size_t count = std::min(kBatch, images.size() - start);
    std::vector<double> buf;
    buf.reserve(count * pixels);
    for (size_t i = 0; i < count; ++i)
      buf.insert(buf.end(), images[start + i].begin(), images[start + i].end());
    Tensor x = Tensor::from({static_cast<int>(count), 3, h, h}, std::move(buf));
    Tensor rows = encode_latent_rows(x);
    auto [indices, quantized] = quantize(rows.data());
    for (size_t i = 0; i < count; ++i)
      grids.emplace_back(indices.begin() + static_cast<long>(i) * n,
                         indices.begin() + static_cast<long>(i + 1) * n);
  }
  return grids;
}

std::vector<std::vector<double>> VqTokenizer::decode(
    const std::vector<std::vector<int>>& grids) const {
  if (!trained_) throw std::runtime_error("vq decode: tokenizer has not been trained");
  const int n = config_.tokens_per_image();
  for (const auto& g : grids) {
    if (static_cast<int>(g.size()) != n)
      throw std::invalid_argument("vq decode: grid length does not match configured resolution");
    for (int id : g)
      if (id < 0 || id >= config_.codebook_size)
        throw std::invalid_argument("vq decode: token id " + std::to_string(id) +
                                    " outside codebook of size " +
                                    std::to_string(config_.codebook_size));
  }

  ad::NoGradGuard no_grad;
  const int h = config_.image_size;
  std::vector<std::vector<double>> images;
  images.reserve(grids.size());
  constexpr size_t kBatch = 64;
  for (size_t start = 0; start < grids.size(); start += kBatch) {
    const size_t count = std::min(kBatch, grids.size() - start);
    std::vector<int> ids;
    ids.reserve(count * static_cast<size_t>(n));
    for (size_t i = 0; i < count; ++i)
      ids.insert(ids.end(), grids[start + i].begin(), grids[start + i].end());
    Tensor rows = ad::embedding(codebook_, ids);
    Tensor out = decode_latent_rows(rows, static_cast<int>(count));
    const size_t pixels = static_cast<size_t>(3) * h * h;
    for (size_t i = 0; i < count; ++i)
      images.emplace_back(out.data().begin() + static_cast<long>(i * pixels),
                          out.data().begin() + static_cast<long>((i + 1) * pixels));
  }
  return images;
}

VqTrainStats VqTokenizer::train(const std::vector<std::vector<double>>& images, int epochs,
                                double lr, int batch_size, RngStream& rng) {
  if (images.empty()) throw std::invalid_argument("vq train: empty dataset");
  const int h = config_.image_size;
  const size_t pixels = static_cast<size_t>(3) * h * h;
  for (const auto& img : images)
    if (img.size() != pixels)
      throw std::invalid_argument("vq train: image buffer does not match configured size");

  VqTrainStats stats;
  stats.final_usage.assign(static_cast<size_t>(config_.codebook_size), 0);
  const int n = config_.tokens_per_image();
  ad::AdamSettings adam;
  adam.lr = lr;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<int> order(images.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);

    std::vector<int64_t> usage(static_cast<size_t>(config_.codebook_size), 0);
    std::vector<double> last_batch_latents;
    double loss_sum = 0, recon_sum = 0;
    int batches = 0;

    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
      const size_t count = std::min(static_cast<size_t>(batch_size), order.size() - start);
      std::vector<double> buf;
      buf.reserve(count * pixels);
      for (size_t i = 0; i < count; ++i) {
        const auto& img = images[static_cast<size_t>(order[start + i])];
        buf.insert(buf.end(), img.begin(), img.end());
      }
      Tensor x = Tensor::from({static_cast<int>(count), 3, h, h}, std::move(buf));

      Tensor z_e = encode_latent_rows(x);
      auto [indices, quantized] = quantize(z_e.data());
      for (int id : indices) ++usage[static_cast<size_t>(id)];
      last_batch_latents = z_e.data();

      Tensor z_q = ad::embedding(codebook_, indices);
      // straight-through: decoder sees quantized values, encoder sees its own gradient
      Tensor decoder_in = ad::add(z_e, ad::detach(ad::sub(z_q, z_e)));
      Tensor x_hat = decode_latent_rows(decoder_in, static_cast<int>(count));

      const double recon_norm = static_cast<double>(count * pixels);
      const double latent_norm = static_cast<double>(count) * n * config_.latent_dim;
      Tensor recon = ad::scale(ad::sum_squares(ad::sub(x_hat, x)), 1.0 / recon_norm);
      Tensor codebook_loss =
          ad::scale(ad::sum_squares(ad::sub(z_q, ad::detach(z_e))), 1.0 / latent_norm);
      Tensor commit =
          ad::scale(ad::sum_squares(ad::sub(z_e, ad::detach(z_q))), 0.25 / latent_norm);
      Tensor loss = ad::add(recon, ad::add(codebook_loss, commit));

      const double loss_value = loss.item();
      if (!std::isfinite(loss_value))
        throw std::runtime_error("vq train: loss diverged (non-finite) at epoch " +
                                 std::to_string(epoch));
      loss.backward();
      params_.fill_missing_grads();
      params_.adam_step(adam);

      loss_sum += loss_value;
      recon_sum += recon.item();
      ++batches;
    }

    // revive dead codebook entries from recent encoder outputs
    if (!last_batch_latents.empty()) {
      const int d = config_.latent_dim;
      const size_t latent_rows = last_batch_latents.size() / static_cast<size_t>(d);
      auto& entries = codebook_.mutable_data();
      for (int e = 0; e < config_.codebook_size; ++e) {
        if (usage[static_cast<size_t>(e)] > 0) continue;
        const size_t pick = static_cast<size_t>(rng.uniform_int(static_cast<int>(latent_rows)));
        for (int j = 0; j < d; ++j)
          entries[static_cast<size_t>(e) * d + j] =
              last_batch_latents[pick * static_cast<size_t>(d) + j] + 0.01 * rng.normal();
      }
    }

    stats.epoch_loss.push_back(loss_sum / std::max(batches, 1));
    stats.epoch_recon_mse.push_back(recon_sum / std::max(batches, 1));
    stats.final_usage = usage;
  }

  trained_ = true;
  return stats;
}

void VqTokenizer::save(const std::filesystem::path& path) const {
  Checkpoint ck;
  ck.component = "vq-tokenizer";
  ck.meta["image_size"] = std::to_string(config_.image_size);
  ck.meta["downsample"] = std::to_string(config_.downsample);
  ck.meta["codebook_size"] = std::to_string(config_.codebook_size);
  ck.meta["latent_dim"] = std::to_string(config_.latent_dim);
  ck.meta["channels"] = std::to_string(config_.channels);
  ck.meta["trained"] = trained_ ? "1" : "0";
  ck.arrays = params_.export_arrays();
  save_checkpoint(path, ck);
}

VqTokenizer VqTokenizer::load(const std::filesystem::path& path) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.component != "vq-tokenizer")
    throw std::runtime_error("vq load: checkpoint holds component '" + ck.component + "'");
  VqConfig config;
  config.image_size = std::stoi(ck.meta.at("image_size"));
  config.downsample = std::stoi(ck.meta.at("downsample"));
  config.codebook_size = std::stoi(ck.meta.at("codebook_size"));
  config.latent_dim = std::stoi(ck.meta.at("latent_dim"));
  config.channels = std::stoi(ck.meta.at("channels"));
  VqTokenizer tok(config, /*init_seed=*/0);
  tok.params_.import_arrays(ck.arrays);
  tok.trained_ = ck.meta_or("trained", "0") == "1";
  return tok;
}

}  // namespace storygen::vq
