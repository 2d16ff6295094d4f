#include "tristyle/models.hpp"

#include "tristyle/checkpoint.hpp"
#include "tristyle/errors.hpp"

namespace tristyle {

namespace {

Checkpoint load_kind(const std::filesystem::path& path, const std::string& kind) {
  Checkpoint ckpt = load_checkpoint(path);
  const std::string found = ckpt.manifest.value("kind", "");
  if (found != kind)
    fail(ErrorKind::State, path.string() + " holds a '" + found + "' checkpoint, expected '" + kind + "'");
  return ckpt;
}

}  // namespace

void save_autoencoder(const std::filesystem::path& path, const Autoencoder& ae, nlohmann::json extra) {
  nlohmann::json m = {{"kind", "autoencoder"}, {"config", ae.config().to_json()}, {"latent_scale", ae.latent_scale()}};
  if (extra.is_object()) m["extra"] = std::move(extra);
  save_checkpoint(path, to_checkpoint(ae.params(), m));
}

Autoencoder load_autoencoder(const std::filesystem::path& path) {
  const Checkpoint ckpt = load_kind(path, "autoencoder");
  Autoencoder ae(AutoencoderConfig::from_json(ckpt.manifest.at("config")), 0);
  load_params(ae.params(), ckpt);
  ae.set_latent_scale(ckpt.manifest.at("latent_scale").get<float>());
  return ae;
}

void save_denoiser(const std::filesystem::path& path, const Denoiser& model, const NoiseSchedule& schedule,
                   nlohmann::json extra) {
  nlohmann::json m = {{"kind", "denoiser"}, {"config", model.config().to_json()}, {"schedule", schedule.to_json()}};
  if (extra.is_object()) m["extra"] = std::move(extra);
  save_checkpoint(path, to_checkpoint(model.params(), m));
}

Denoiser load_denoiser(const std::filesystem::path& path, NoiseSchedule* schedule) {
  const Checkpoint ckpt = load_kind(path, "denoiser");
  Denoiser model(DenoiserConfig::from_json(ckpt.manifest.at("config")), 0);
  load_params(model.params(), ckpt);
  if (schedule) *schedule = NoiseSchedule::from_json(ckpt.manifest.at("schedule"));
  return model;
}

void save_lora(const std::filesystem::path& path, const LoraAdapter& adapter) {
  const auto& man = adapter.manifest();
  nlohmann::json m = {{"kind", "lora"},         {"rank", adapter.rank()},
                      {"scale", adapter.scale()}, {"stage", man.stage},
                      {"dataset_hash", man.dataset_hash}, {"steps", man.steps},
                      {"seed", man.seed}};
  save_checkpoint(path, to_checkpoint(adapter.params(), m));
}

LoraAdapter load_lora(const std::filesystem::path& path) {
  const Checkpoint ckpt = load_kind(path, "lora");
  LoraAdapter a = LoraAdapter::from_params(ckpt.tensors, ckpt.manifest.at("rank").get<int>(),
                                           ckpt.manifest.at("scale").get<float>());
  auto& man = a.manifest();
  man.stage = ckpt.manifest.value("stage", 0);
  man.dataset_hash = ckpt.manifest.value("dataset_hash", "");
  man.steps = ckpt.manifest.value("steps", 0);
  man.seed = ckpt.manifest.value("seed", std::uint64_t{0});
  return a;
}

ModelBundle ModelBundle::load(const std::filesystem::path& ae_path, const std::filesystem::path& denoiser_path) {
  ModelBundle b;
  b.ae = load_autoencoder(ae_path);
  b.denoiser = load_denoiser(denoiser_path, &b.schedule);
  return b;
}

}  // namespace tristyle
