#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "tristyle/autoencoder.hpp"
#include "tristyle/denoiser.hpp"
#include "tristyle/schedule.hpp"

namespace tristyle {

struct OptimizerConfig {
  float lr = 1e-3f;
  int batch = 8;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float grad_clip = 1.0f;
  // Probability of replacing a caption by the empty prompt during training.
  float cond_dropout = 0.1f;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static OptimizerConfig from_json(const nlohmann::json& j);
};

class Adam {
 public:
  Adam(nn::ParamList params, const OptimizerConfig& config);
  void zero_grad();
  // Clips the global gradient norm, then applies one Adam update.
  void step();

 private:
  nn::ParamList params_;
  OptimizerConfig config_;
  std::vector<Tensor> m_, v_;
  int t_ = 0;
};

struct TrainTrace {
  std::vector<float> losses;

  // Mean of the first / last `window` losses.
  double smoothed_initial(int window = 50) const;
  double smoothed_final(int window = 50) const;
  nlohmann::json to_json() const;
};

struct LatentDataset {
  Tensor latents;                     // [N, C, S, S]
  std::vector<std::string> captions;  // N prompts

  int size() const { return latents.empty() ? 0 : latents.dim(0); }
};

// Epsilon-prediction training. Only `trainable` parameters are updated; when
// null, every denoiser parameter is trained. `lora` (optional) is active in
// the forward pass, which is how adapter fine-tuning reuses this loop.
TrainTrace train_epsilon(const Denoiser& model, const LatentDataset& data, const NoiseSchedule& schedule, int steps,
                         const OptimizerConfig& config, const nn::ParamList* trainable = nullptr,
                         const LoraAdapter* lora = nullptr);

inline TrainTrace train_denoiser(const Denoiser& model, const LatentDataset& data, const NoiseSchedule& schedule,
                                 int steps, const OptimizerConfig& config) {
  return train_epsilon(model, data, schedule, steps, config);
}

// Trains on [N, 3, H, W] images, then sets the latent scale so encoded
// training latents have unit root-mean-square.
TrainTrace train_autoencoder(Autoencoder& ae, const Tensor& images, int steps, const OptimizerConfig& config);

// Per-pixel mean absolute error of decode(encode(x)).
double reconstruction_mae(const Autoencoder& ae, const Tensor& images);

}  // namespace tristyle
