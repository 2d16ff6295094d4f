#include "tristyle/triple_pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>

#include "tristyle/errors.hpp"
#include "tristyle/image_io.hpp"
#include "tristyle/rng.hpp"

namespace tristyle {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

Tensor as_batch(const Tensor& t) {
  require(t.rank() == 3 || t.rank() == 4, "expected [3, H, W] or [N, 3, H, W] content, got " + shape_string(t.shape()));
  return t.rank() == 3 ? t.reshaped({1, t.dim(0), t.dim(1), t.dim(2)}) : t;
}

std::vector<std::string> resolve_prompts(const std::vector<std::string>& prompts, const std::string& fallback, int n) {
  if (prompts.empty()) return std::vector<std::string>(static_cast<std::size_t>(n), fallback);
  require(static_cast<int>(prompts.size()) == n,
          "expected " + std::to_string(n) + " prompts, got " + std::to_string(prompts.size()));
  return prompts;
}

Tensor contexts(const Denoiser& model, const std::vector<std::string>& prompts) {
  std::vector<Tensor> parts;
  for (const auto& p : prompts) parts.push_back(model.context_for(p, 1));
  return concat_batch(parts);
}

// Per-image noise streams keyed by role so every pass is reproducible alone.
Tensor role_noise(const Shape& latent_shape, std::uint64_t seed, const char* role) {
  const int n = latent_shape[0];
  Shape one = latent_shape;
  one[0] = 1;
  std::vector<Tensor> parts;
  for (int i = 0; i < n; ++i) {
    Rng rng(seed + static_cast<std::uint64_t>(i), role);
    parts.push_back(rng.normal_tensor(one));
  }
  return concat_batch(parts);
}

}  // namespace

PipelineConfig PipelineConfig::defaults(const DenoiserConfig& config) {
  PipelineConfig c;
  c.policy = InjectionPolicy::defaults(config);
  return c;
}

void PipelineConfig::validate(const DenoiserConfig& config) const {
  if (inference_steps < 1) fail(ErrorKind::InvalidInput, "inference_steps must be positive");
  if (!(t_s_small > 0 && t_s_small < t_s_large && t_s_large <= inference_steps))
    fail(ErrorKind::InvalidInput,
         "thresholds must satisfy 0 < t_s_small < t_s_large <= " + std::to_string(inference_steps) +
             ", got t_s_small=" + std::to_string(t_s_small) + " t_s_large=" + std::to_string(t_s_large),
         {{"invariant", "0 < t_s_small < t_s_large <= T"}, {"t_s_small", t_s_small}, {"t_s_large", t_s_large}});
  if (!(guidance > 0.0f)) fail(ErrorKind::InvalidInput, "guidance scale must be positive");
  policy.validate(config);
  Vocabulary::standard().encode(prompt);
  if (inversion_prompt) Vocabulary::standard().encode(*inversion_prompt);
}

nlohmann::json PipelineConfig::to_json() const {
  nlohmann::json j = {{"inference_steps", inference_steps},
                      {"t_s_small", t_s_small},
                      {"t_s_large", t_s_large},
                      {"prompt", prompt},
                      {"guidance", guidance},
                      {"use_lora", use_lora},
                      {"lora_id", lora_id},
                      {"seed", seed},
                      {"policy", policy.to_json()},
                      {"experimental_adain", experimental_adain}};
  j["inversion_prompt"] = inversion_prompt ? nlohmann::json(*inversion_prompt) : nlohmann::json(nullptr);
  return j;
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j, const DenoiserConfig& config) {
  PipelineConfig c = defaults(config);
  c.inference_steps = j.value("inference_steps", c.inference_steps);
  c.t_s_small = j.value("t_s_small", c.t_s_small);
  c.t_s_large = j.value("t_s_large", c.t_s_large);
  c.prompt = j.value("prompt", c.prompt);
  if (j.contains("inversion_prompt") && !j["inversion_prompt"].is_null())
    c.inversion_prompt = j["inversion_prompt"].get<std::string>();
  c.guidance = j.value("guidance", c.guidance);
  c.use_lora = j.value("use_lora", c.use_lora);
  c.lora_id = j.value("lora_id", c.lora_id);
  c.seed = j.value("seed", c.seed);
  if (j.contains("policy")) c.policy = InjectionPolicy::from_json(j["policy"], config);
  c.experimental_adain = j.value("experimental_adain", c.experimental_adain);
  return c;
}

nlohmann::json TransferResult::to_json() const {
  nlohmann::json passes_json = nlohmann::json::array();
  for (const auto& p : passes)
    passes_json.push_back({{"role", p.role},
                           {"direction", p.direction},
                           {"start_timestep", p.start_timestep},
                           {"steps", p.steps},
                           {"lora", p.lora},
                           {"captured", p.captured},
                           {"millis", p.millis}});
  return {{"config", config}, {"passes", passes_json}, {"millis", millis},
          {"images", images.empty() ? 0 : images.dim(0)}};
}

std::string SweepReport::csv() const {
  std::ostringstream os;
  os.precision(8);
  os << "t_s_small,t_s_large,content_distance,style_distance\n";
  for (const auto& r : rows)
    os << r.t_s_small << ',' << r.t_s_large << ',' << r.content_distance << ',' << r.style_distance << '\n';
  return os.str();
}

TriplePipeline::TriplePipeline(const ModelBundle& models, const LoraAdapter* lora) : models_(models), lora_(lora) {}

TransferResult TriplePipeline::image_style_transfer(const Tensor& content, const PipelineConfig& config,
                                                    const std::vector<std::string>& prompts) const {
  const auto start = Clock::now();
  const Denoiser& model = models_.denoiser;
  config.validate(model.config());
  const Tensor images = as_batch(content);
  const int n = images.dim(0);
  const auto main_prompts = resolve_prompts(prompts, config.prompt, n);
  const auto inv_prompts =
      config.inversion_prompt ? std::vector<std::string>(static_cast<std::size_t>(n), *config.inversion_prompt)
                              : main_prompts;
  for (const auto& p : main_prompts) Vocabulary::standard().encode(p);
  const LoraAdapter* lora = nullptr;
  if (config.use_lora) {
    if (!lora_) fail(ErrorKind::State, "pipeline configured with use_lora but no LoRA weights are loaded");
    lora = lora_;
  }

  const DdimSampler sampler(models_.schedule, config.inference_steps);
  const int t_l = sampler.timestep_at(config.t_s_large);
  const int t_s = sampler.timestep_at(config.t_s_small);
  const auto& policy = config.policy;
  const bool need_style = policy.swap_kv && !policy.target_layers.empty();
  const bool need_inversion = policy.fuse_query && !policy.target_layers.empty();

  TransferResult result;
  result.config = config.to_json();
  const Tensor f0 = models_.ae.encode(images);
  const Tensor ctx = contexts(model, main_prompts);
  const Tensor uncond = config.guidance != 1.0f ? model.context_for("", n) : Tensor();
  auto call = [&](const Tensor& c, const LoraAdapter* l, HookList hooks, float guidance) {
    return ModelCall{&model, c, uncond, guidance, l, std::move(hooks)};
  };

  AttentionCache style_cache, inversion_cache;
  Tensor f_l;
  if (need_style || config.experimental_adain) {
    const auto t0 = Clock::now();
    f_l = forward_diffuse(models_.schedule, f0, t_l, role_noise(f0.shape(), config.seed, "style"));
    CaptureHook capture(style_cache, policy.target_layers, false, true);
    HookList hooks;
    if (need_style) hooks.push_back(&capture);
    sampler.sample(f_l, t_l, call(ctx, lora, hooks, config.guidance));
    result.passes.push_back({"style", "denoise", t_l, config.t_s_large, lora != nullptr, style_cache.size(), ms_since(t0)});
  }
  if (need_inversion) {
    const auto t0 = Clock::now();
    const Tensor inv_ctx = contexts(model, inv_prompts);
    const Tensor f_i = sampler.invert(f0, call(inv_ctx, nullptr, {}, 1.0f));
    result.passes.push_back({"inversion", "invert", 0, sampler.inference_steps(), false, 0, ms_since(t0)});
    const auto t1 = Clock::now();
    CaptureHook capture(inversion_cache, policy.target_layers, true, false);
    sampler.sample(f_i, sampler.timesteps().back(), call(inv_ctx, nullptr, {&capture}, config.guidance));
    result.passes.push_back({"inversion-denoise", "denoise", sampler.timesteps().back(), sampler.inference_steps(),
                             false, inversion_cache.size(), ms_since(t1)});
  }

  const auto t0 = Clock::now();
  Tensor f_s = forward_diffuse(models_.schedule, f0, t_s, role_noise(f0.shape(), config.seed, "main"));
  if (config.experimental_adain) f_s = adain(f_s, f_l);
  InjectHook inject = install(policy, {need_style ? &style_cache : nullptr, need_inversion ? &inversion_cache : nullptr});
  HookList hooks;
  if (need_style || need_inversion) hooks.push_back(&inject);
  const Tensor out = sampler.sample(f_s, t_s, call(ctx, lora, hooks, config.guidance));
  result.passes.push_back({"main", "denoise", t_s, config.t_s_small, lora != nullptr, 0, ms_since(t0)});

  result.images = models_.ae.decode(out);
  if (!result.images.all_finite()) fail(ErrorKind::Numerical, "pipeline produced non-finite pixels");
  result.millis = ms_since(start);
  return result;
}

TransferResult TriplePipeline::text_stylization(const Tensor& content, const std::string& prompt,
                                                PipelineConfig config) const {
  config.prompt = prompt;
  return image_style_transfer(content, config);
}

TransferResult TriplePipeline::color_edit(const Tensor& content, const std::string& color_prompt,
                                          PipelineConfig config) const {
  const auto words = split_words(color_prompt);
  const bool has_color = std::any_of(words.begin(), words.end(),
                                     [](const std::string& w) { return Vocabulary::standard().is_color(w); });
  if (!has_color)
    fail(ErrorKind::InvalidInput, "color prompt '" + color_prompt + "' names no vocabulary color",
         {{"colors", Vocabulary::standard().color_words()}});
  return text_stylization(content, color_prompt, std::move(config));
}

Tensor TriplePipeline::img2img(const Tensor& content, const std::vector<std::string>& prompts, int t_index,
                               int inference_steps, std::uint64_t seed, bool with_lora) const {
  const Tensor images = as_batch(content);
  const int n = images.dim(0);
  const auto ps = resolve_prompts(prompts, "", n);
  const DdimSampler sampler(models_.schedule, inference_steps);
  const int t = sampler.timestep_at(t_index);
  const LoraAdapter* lora = nullptr;
  if (with_lora) {
    if (!lora_) fail(ErrorKind::State, "img2img with LoRA requested but no LoRA weights are loaded");
    lora = lora_;
  }
  const Tensor f0 = models_.ae.encode(images);
  const Tensor x = forward_diffuse(models_.schedule, f0, t, role_noise(f0.shape(), seed, "main"));
  const Tensor out = sampler.sample(x, t, ModelCall{&models_.denoiser, contexts(models_.denoiser, ps), {}, 1.0f, lora, {}});
  return models_.ae.decode(out);
}

SweepReport TriplePipeline::threshold_sweep(const Tensor& contents, const std::vector<std::pair<int, int>>& grid,
                                            const PipelineConfig& config, const Tensor& style_refs,
                                            const Embedder& embedder, const PerceptualDistance& perceptual,
                                            const std::vector<std::string>& prompts) const {
  require(!grid.empty(), "threshold sweep needs at least one grid point");
  std::vector<PipelineConfig> configs;
  for (const auto& [small, large] : grid) {
    PipelineConfig c = config;
    c.t_s_small = small;
    c.t_s_large = large;
    c.validate(models_.denoiser.config());
    configs.push_back(std::move(c));
  }
  const Tensor images = as_batch(contents);
  const Eigen::RowVectorXd centroid = embedder.embed_images(style_refs).colwise().mean();
  SweepReport report;
  std::vector<Tensor> tiles;
  const int shown = std::min(images.dim(0), 8);
  for (const auto& c : configs) {
    const TransferResult r = image_style_transfer(images, c, prompts);
    SweepRow row;
    row.t_s_small = c.t_s_small;
    row.t_s_large = c.t_s_large;
    row.per_image_content = perceptual.batch(r.images, images);
    const Embeddings e = embedder.embed_images(r.images);
    for (Eigen::Index i = 0; i < e.rows(); ++i) row.per_image_style.push_back((e.row(i) - centroid).norm());
    for (double v : row.per_image_content) row.content_distance += v;
    for (double v : row.per_image_style) row.style_distance += v;
    row.content_distance /= static_cast<double>(row.per_image_content.size());
    row.style_distance /= static_cast<double>(row.per_image_style.size());
    report.rows.push_back(std::move(row));
    tiles.push_back(r.images.slice_batch(0, shown));
  }
  report.grid = tile_images(concat_batch(tiles), shown);
  return report;
}

}  // namespace tristyle
