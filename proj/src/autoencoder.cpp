#include "tristyle/autoencoder.hpp"

#include <algorithm>

#include "tristyle/errors.hpp"

namespace tristyle {

nlohmann::json AutoencoderConfig::to_json() const {
  return {{"image_channels", image_channels}, {"latent_channels", latent_channels}, {"factor", factor},
          {"hidden", hidden},                 {"mid", mid},                         {"image_size", image_size}};
}

AutoencoderConfig AutoencoderConfig::from_json(const nlohmann::json& j) {
  AutoencoderConfig c;
  c.image_channels = j.value("image_channels", c.image_channels);
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.factor = j.value("factor", c.factor);
  c.hidden = j.value("hidden", c.hidden);
  c.mid = j.value("mid", c.mid);
  c.image_size = j.value("image_size", c.image_size);
  return c;
}

Autoencoder::Autoencoder(const AutoencoderConfig& config, std::uint64_t seed) : config_(config), loaded_(true) {
  require(config.factor >= 1 && config.image_size % config.factor == 0, "image size must be divisible by factor");
  Rng rng(seed, "autoencoder");
  const int patch = config.image_channels * config.factor * config.factor;
  enc_in_ = nn::Conv2d(patch, config.hidden, 1, 1, 0, rng, 1.4f);
  enc_mid_ = nn::Conv2d(config.hidden, config.mid, 3, 1, 1, rng, 1.4f);
  enc_out_ = nn::Conv2d(config.mid, config.latent_channels, 1, 1, 0, rng);
  dec_in_ = nn::Conv2d(config.latent_channels, config.mid, 1, 1, 0, rng, 1.4f);
  dec_mid_ = nn::Conv2d(config.mid, config.hidden, 3, 1, 1, rng, 1.4f);
  dec_out_ = nn::Conv2d(config.hidden, patch, 1, 1, 0, rng);
}

Shape Autoencoder::latent_shape(int n) const {
  return {n, config_.latent_channels, config_.latent_size(), config_.latent_size()};
}

ag::Var Autoencoder::encode_raw(const ag::Var& images) const {
  ag::Var h = ag::space_to_depth(images, config_.factor);
  h = ag::silu(enc_in_(h));
  h = ag::silu(enc_mid_(h));
  return enc_out_(h);
}

ag::Var Autoencoder::decode_raw(const ag::Var& latents) const {
  ag::Var h = ag::silu(dec_in_(latents));
  h = ag::silu(dec_mid_(h));
  return ag::depth_to_space(dec_out_(h), config_.factor);
}

void Autoencoder::validate_images(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != config_.image_channels)
    fail(ErrorKind::InvalidInput, "expected images [N, " + std::to_string(config_.image_channels) + ", H, W], got " +
                                      shape_string(images.shape()));
  if (images.dim(2) % config_.factor != 0 || images.dim(3) % config_.factor != 0)
    fail(ErrorKind::InvalidInput, "image size " + std::to_string(images.dim(2)) + "x" + std::to_string(images.dim(3)) +
                                      " is not divisible by the downsample factor " + std::to_string(config_.factor));
  if (images.dim(2) != config_.image_size || images.dim(3) != config_.image_size)
    fail(ErrorKind::InvalidInput, "image size must be " + std::to_string(config_.image_size) + "x" +
                                      std::to_string(config_.image_size));
  for (float v : images.values())
    if (!(v >= 0.0f && v <= 1.0f)) fail(ErrorKind::InvalidInput, "image values must lie in [0, 1]");
}

Tensor Autoencoder::encode(const Tensor& images) const {
  if (!loaded_) fail(ErrorKind::State, "autoencoder weights are not loaded");
  validate_images(images);
  ag::NoGradGuard guard;
  Tensor z = encode_raw(ag::constant(images)).value();
  for (float& v : z.values()) v *= latent_scale_;
  return z;
}

Tensor Autoencoder::decode(const Tensor& latents) const {
  if (!loaded_) fail(ErrorKind::State, "autoencoder weights are not loaded");
  if (latents.shape() != latent_shape(latents.rank() == 4 ? latents.dim(0) : 0))
    fail(ErrorKind::InvalidInput, "latent shape " + shape_string(latents.shape()) + " does not match the autoencoder");
  ag::NoGradGuard guard;
  Tensor z = latents;
  for (float& v : z.values()) v /= latent_scale_;
  Tensor x = decode_raw(ag::constant(std::move(z))).value();
  for (float& v : x.values()) v = std::clamp(v, 0.0f, 1.0f);
  return x;
}

nn::ParamList Autoencoder::params() const {
  nn::ParamList out;
  enc_in_.collect("enc_in", out);
  enc_mid_.collect("enc_mid", out);
  enc_out_.collect("enc_out", out);
  dec_in_.collect("dec_in", out);
  dec_mid_.collect("dec_mid", out);
  dec_out_.collect("dec_out", out);
  return out;
}

}  // namespace tristyle
