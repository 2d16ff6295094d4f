#pragma once

#include <filesystem>

#include <json.hpp>

#include "tristyle/autoencoder.hpp"
#include "tristyle/denoiser.hpp"
#include "tristyle/lora_adapter.hpp"
#include "tristyle/schedule.hpp"

namespace tristyle {

// Manifests carry "kind" and "config" so a checkpoint alone rebuilds its model.
void save_autoencoder(const std::filesystem::path& path, const Autoencoder& ae, nlohmann::json extra = {});
Autoencoder load_autoencoder(const std::filesystem::path& path);

void save_denoiser(const std::filesystem::path& path, const Denoiser& model, const NoiseSchedule& schedule,
                   nlohmann::json extra = {});
Denoiser load_denoiser(const std::filesystem::path& path, NoiseSchedule* schedule = nullptr);

void save_lora(const std::filesystem::path& path, const LoraAdapter& adapter);
LoraAdapter load_lora(const std::filesystem::path& path);

// Shared read-only weights of one toy model.
struct ModelBundle {
  Autoencoder ae;
  Denoiser denoiser;
  NoiseSchedule schedule;

  static ModelBundle load(const std::filesystem::path& ae_path, const std::filesystem::path& denoiser_path);
};

}  // namespace tristyle
