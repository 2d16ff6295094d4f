#pragma once

#include <json.hpp>

#include "tristyle/nn.hpp"

namespace tristyle {

struct AutoencoderConfig {
  int image_channels = 3;
  int latent_channels = 4;
  int factor = 4;
  int hidden = 64;
  int mid = 32;
  int image_size = 64;

  int latent_size() const { return image_size / factor; }
  nlohmann::json to_json() const;
  static AutoencoderConfig from_json(const nlohmann::json& j);
};

// Patch-wise convolutional autoencoder with downsample factor `factor`.
// Latents are multiplied by latent_scale so the trained latent set has unit std.
class Autoencoder {
 public:
  Autoencoder() = default;
  Autoencoder(const AutoencoderConfig& config, std::uint64_t seed);

  const AutoencoderConfig& config() const { return config_; }
  float latent_scale() const { return latent_scale_; }
  void set_latent_scale(float s) { latent_scale_ = s; }
  bool loaded() const { return loaded_; }

  // Shape of latents produced for a batch of n images.
  Shape latent_shape(int n) const;

  // Differentiable paths (unscaled latents) used in training.
  ag::Var encode_raw(const ag::Var& images) const;
  ag::Var decode_raw(const ag::Var& latents) const;

  // images: [N, 3, H, W] in [0, 1] -> scaled latents.
  Tensor encode(const Tensor& images) const;
  // scaled latents -> images clamped to [0, 1].
  Tensor decode(const Tensor& latents) const;

  nn::ParamList params() const;

 private:
  void validate_images(const Tensor& images) const;

  AutoencoderConfig config_;
  float latent_scale_ = 1.0f;
  bool loaded_ = false;
  nn::Conv2d enc_in_, enc_mid_, enc_out_;
  nn::Conv2d dec_in_, dec_mid_, dec_out_;
};

}  // namespace tristyle
