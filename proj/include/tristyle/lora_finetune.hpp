#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tristyle/models.hpp"
#include "tristyle/train.hpp"

namespace tristyle {

// Selections required per stage transition.
struct StageQuotas {
  int stage1_to_2 = 50;
  int stage2_to_3 = 50;

  // 1, 1 + q12, 1 + q12 + q23 for stages 1, 2, 3.
  int expected_size(int stage) const;
  // Selections needed to leave `stage`.
  int quota_after(int stage) const;
  nlohmann::json to_json() const;
  static StageQuotas from_json(const nlohmann::json& j);
};

struct StageItem {
  std::string id;
  std::filesystem::path image;
  std::string caption;
};

struct StageDataset {
  int stage = 1;
  std::vector<StageItem> items;

  int size() const { return static_cast<int>(items.size()); }
  void validate(const StageQuotas& quotas) const;
  // SHA-256 over ids, captions and image bytes.
  std::string hash() const;
  nlohmann::json to_json() const;
  static StageDataset from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static StageDataset load(const std::filesystem::path& path);
};

// Raises invalid-input unless `next` is the stage after `prev` and contains it.
void validate_nesting(const StageDataset& prev, const StageDataset& next);

struct FinetuneConfig {
  int steps = 1000;
  float lr = 1e-3f;
  int batch = 4;
  float cond_dropout = 0.1f;
  std::uint64_t seed = 0;
  int rank = 8;
  float scale = 1.0f;

  // 1000 / 800 / 800 for stages 1 / 2 / 3.
  static int default_steps(int stage);
  nlohmann::json to_json() const;
  static FinetuneConfig from_json(const nlohmann::json& j);
};

LoraAdapter fresh_adapter(const Denoiser& model, const FinetuneConfig& config);

// Trains only the adapter's A/B tensors on the stage images, conditioned on
// their captions. Base weights are never written.
TrainTrace finetune_stage(const ModelBundle& base, LoraAdapter& adapter, const StageDataset& dataset,
                          const FinetuneConfig& config, const StageQuotas& quotas);

struct CandidateRecord {
  std::string id;
  std::filesystem::path image;
  std::uint64_t seed = 0;
  int stage = 1;
  std::string prompt;

  nlohmann::json to_json() const;
  static CandidateRecord from_json(const nlohmann::json& j);
};

std::string candidate_id(int stage, std::uint64_t seed);

// Samples n images from pure noise with seeds seed..seed+n-1, writes them as
// PNGs into out_dir and appends one row per image to out_dir/candidates.jsonl.
std::vector<CandidateRecord> generate_candidates(const ModelBundle& models, const LoraAdapter& adapter,
                                                 const std::string& prompt, int n, std::uint64_t seed, int stage,
                                                 const std::filesystem::path& out_dir, int inference_steps = 50);

}  // namespace tristyle
