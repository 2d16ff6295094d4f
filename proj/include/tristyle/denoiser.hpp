#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tristyle/attention_hook.hpp"
#include "tristyle/lora_adapter.hpp"
#include "tristyle/text.hpp"

namespace tristyle {

struct DenoiserConfig {
  int latent_channels = 4;
  int latent_size = 16;
  int base_channels = 32;
  std::vector<int> channel_mult{1, 2};
  // Levels (indices into channel_mult) whose blocks carry attention.
  std::vector<int> attention_levels{0, 1};
  int decoder_blocks = 2;
  int heads = 2;
  int time_dim = 64;
  int text_dim = 32;
  int context_length = 12;
  int vocab_size = 0;
  int groups = 8;

  // Ordered names of the self-attention layers in the decoder half.
  std::vector<std::string> decoder_attention_layers() const;
  std::vector<std::string> all_attention_layers() const;
  void validate() const;
  nlohmann::json to_json() const;
  static DenoiserConfig from_json(const nlohmann::json& j);
};

// Toy conditional U-Net predicting epsilon. Every attention block runs
// self-attention (hookable), cross-attention on the text context and an MLP.
class Denoiser {
 public:
  Denoiser();
  Denoiser(const DenoiserConfig& config, std::uint64_t seed);
  ~Denoiser();
  Denoiser(Denoiser&&) noexcept;
  Denoiser& operator=(Denoiser&&) noexcept;

  const DenoiserConfig& config() const { return config_; }
  bool loaded() const { return loaded_; }
  const TextEncoder& text_encoder() const;

  // x: [N, C, S, S], timesteps: one per sample, context: [N, L, D].
  ag::Var forward(const ag::Var& x, std::span<const int> timesteps, const ag::Var& context,
                  const HookList& hooks = {}, const LoraAdapter* lora = nullptr) const;

  // Inference entry point; the same timestep for the whole batch.
  // context is [N, L, D] or [L, D] (broadcast over the batch).
  Tensor predict_noise(const Tensor& x, int timestep, const Tensor& context, const HookList& hooks = {},
                       const LoraAdapter* lora = nullptr) const;

  // Context tensor [n, L, D] for a prompt (empty prompt = unconditional).
  Tensor context_for(const std::string& prompt, int n) const;

  // Activations of the input conv and each encoder level at t = 0 with the
  // unconditional context; used as a perceptual feature stack.
  std::vector<Tensor> encoder_features(const Tensor& x) const;

  std::vector<LoraTarget> lora_targets() const;
  nn::ParamList params() const;

 private:
  struct Impl;
  DenoiserConfig config_;
  bool loaded_ = false;
  std::unique_ptr<Impl> impl_;
};

}  // namespace tristyle
