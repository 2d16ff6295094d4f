#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tristyle/attention_control.hpp"
#include "tristyle/ddim.hpp"
#include "tristyle/eval_harness.hpp"
#include "tristyle/models.hpp"

namespace tristyle {

struct PipelineConfig {
  int inference_steps = 50;
  // Thresholds are inference-step indices into the DDIM sub-schedule.
  int t_s_small = 15;
  int t_s_large = 30;
  // Text for the main and style passes.
  std::string prompt;
  // Text for inversion and the inversion pass; defaults to `prompt`.
  std::optional<std::string> inversion_prompt;
  float guidance = 1.0f;
  bool use_lora = true;
  std::string lora_id;
  std::uint64_t seed = 0;
  InjectionPolicy policy;
  // Matches main-pass initial latent statistics to the style-pass latent.
  bool experimental_adain = false;

  static PipelineConfig defaults(const DenoiserConfig& config);
  void validate(const DenoiserConfig& config) const;
  nlohmann::json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& j, const DenoiserConfig& config);
};

struct PassInfo {
  std::string role;
  std::string direction;
  int start_timestep = 0;
  int steps = 0;
  bool lora = false;
  std::size_t captured = 0;
  double millis = 0.0;
};

struct TransferResult {
  Tensor images;  // [N, 3, H, W]
  nlohmann::json config;
  std::vector<PassInfo> passes;
  double millis = 0.0;

  nlohmann::json to_json() const;
};

struct SweepRow {
  int t_s_small = 0;
  int t_s_large = 0;
  double content_distance = 0.0;
  double style_distance = 0.0;
  std::vector<double> per_image_content;
  std::vector<double> per_image_style;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  Tensor grid;  // one row of outputs per grid point

  std::string csv() const;
};

class TriplePipeline {
 public:
  // `lora` may be null; passes that need it then raise a state error.
  TriplePipeline(const ModelBundle& models, const LoraAdapter* lora);

  // content: [3, H, W] or [N, 3, H, W]. `prompts` (empty or one per image)
  // overrides config.prompt per image. Image i uses seed config.seed + i.
  TransferResult image_style_transfer(const Tensor& content, const PipelineConfig& config,
                                      const std::vector<std::string>& prompts = {}) const;
  TransferResult text_stylization(const Tensor& content, const std::string& prompt, PipelineConfig config) const;
  TransferResult color_edit(const Tensor& content, const std::string& color_prompt, PipelineConfig config) const;

  // Plain DDIM img2img: noise to the threshold with the main-pass noise
  // stream, then denoise without hooks.
  Tensor img2img(const Tensor& content, const std::vector<std::string>& prompts, int t_index, int inference_steps,
                 std::uint64_t seed, bool with_lora = false) const;

  // Content distance uses `perceptual`; style distance is the mean L2
  // distance of output embeddings to the centroid of `style_refs`.
  SweepReport threshold_sweep(const Tensor& contents, const std::vector<std::pair<int, int>>& grid,
                              const PipelineConfig& config, const Tensor& style_refs, const Embedder& embedder,
                              const PerceptualDistance& perceptual, const std::vector<std::string>& prompts = {}) const;

 private:
  const ModelBundle& models_;
  const LoraAdapter* lora_;
};

}  // namespace tristyle
