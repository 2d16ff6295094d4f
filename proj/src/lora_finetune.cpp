#include "tristyle/lora_finetune.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "tristyle/ddim.hpp"
#include "tristyle/errors.hpp"
#include "tristyle/hashing.hpp"
#include "tristyle/image_io.hpp"
#include "tristyle/rng.hpp"

namespace tristyle {

int StageQuotas::expected_size(int stage) const {
  switch (stage) {
    case 1: return 1;
    case 2: return 1 + stage1_to_2;
    case 3: return 1 + stage1_to_2 + stage2_to_3;
    default: fail(ErrorKind::InvalidInput, "stage must be 1, 2 or 3, got " + std::to_string(stage));
  }
}

int StageQuotas::quota_after(int stage) const {
  if (stage == 1) return stage1_to_2;
  if (stage == 2) return stage2_to_3;
  fail(ErrorKind::InvalidInput, "stage " + std::to_string(stage) + " has no following stage");
}

nlohmann::json StageQuotas::to_json() const { return {{"stage1_to_2", stage1_to_2}, {"stage2_to_3", stage2_to_3}}; }

StageQuotas StageQuotas::from_json(const nlohmann::json& j) {
  StageQuotas q;
  q.stage1_to_2 = j.value("stage1_to_2", q.stage1_to_2);
  q.stage2_to_3 = j.value("stage2_to_3", q.stage2_to_3);
  if (q.stage1_to_2 < 1 || q.stage2_to_3 < 1) fail(ErrorKind::InvalidInput, "stage quotas must be positive");
  return q;
}

void StageDataset::validate(const StageQuotas& quotas) const {
  const int want = quotas.expected_size(stage);
  if (size() != want)
    fail(ErrorKind::InvalidInput,
         "stage " + std::to_string(stage) + " dataset must hold " + std::to_string(want) + " images, got " +
             std::to_string(size()),
         {{"stage", stage}, {"expected", want}, {"actual", size()}});
  std::set<std::string> ids;
  for (const auto& it : items) {
    if (it.caption.empty()) fail(ErrorKind::InvalidInput, "dataset item " + it.id + " has no caption");
    if (!ids.insert(it.id).second) fail(ErrorKind::InvalidInput, "duplicate dataset item " + it.id);
  }
}

std::string StageDataset::hash() const {
  std::string acc = "stage=" + std::to_string(stage) + "\n";
  for (const auto& it : items) acc += it.id + "\t" + it.caption + "\t" + sha256_file(it.image) + "\n";
  return sha256_hex(acc);
}

nlohmann::json StageDataset::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& it : items) arr.push_back({{"id", it.id}, {"image", it.image.string()}, {"caption", it.caption}});
  return {{"stage", stage}, {"items", arr}};
}

StageDataset StageDataset::from_json(const nlohmann::json& j) {
  StageDataset d;
  d.stage = j.at("stage").get<int>();
  for (const auto& it : j.at("items"))
    d.items.push_back({it.at("id").get<std::string>(), it.at("image").get<std::string>(),
                       it.at("caption").get<std::string>()});
  return d;
}

void StageDataset::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) fail(ErrorKind::Io, "cannot write " + tmp);
    os << to_json().dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

StageDataset StageDataset::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::NotFound, "no stage dataset at " + path.string());
  try {
    return from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidInput, "malformed stage dataset " + path.string() + ": " + e.what());
  }
}

void validate_nesting(const StageDataset& prev, const StageDataset& next) {
  if (next.stage != prev.stage + 1)
    fail(ErrorKind::InvalidInput, "stage " + std::to_string(next.stage) + " cannot follow stage " +
                                      std::to_string(prev.stage));
  std::set<std::string> ids;
  for (const auto& it : next.items) ids.insert(it.id);
  for (const auto& it : prev.items)
    if (!ids.count(it.id))
      fail(ErrorKind::InvalidInput, "stage " + std::to_string(next.stage) + " dataset drops item " + it.id);
}

int FinetuneConfig::default_steps(int stage) { return stage == 1 ? 1000 : 800; }

nlohmann::json FinetuneConfig::to_json() const {
  return {{"steps", steps}, {"lr", lr},     {"batch", batch}, {"cond_dropout", cond_dropout},
          {"seed", seed},   {"rank", rank}, {"scale", scale}};
}

FinetuneConfig FinetuneConfig::from_json(const nlohmann::json& j) {
  FinetuneConfig c;
  c.steps = j.value("steps", c.steps);
  c.lr = j.value("lr", c.lr);
  c.batch = j.value("batch", c.batch);
  c.cond_dropout = j.value("cond_dropout", c.cond_dropout);
  c.seed = j.value("seed", c.seed);
  c.rank = j.value("rank", c.rank);
  c.scale = j.value("scale", c.scale);
  return c;
}

LoraAdapter fresh_adapter(const Denoiser& model, const FinetuneConfig& config) {
  require(config.rank >= 1, "LoRA rank must be at least 1");
  return LoraAdapter::create(model.lora_targets(), config.rank, config.scale, derive_seed(config.seed, "lora-init"));
}

TrainTrace finetune_stage(const ModelBundle& base, LoraAdapter& adapter, const StageDataset& dataset,
                          const FinetuneConfig& config, const StageQuotas& quotas) {
  dataset.validate(quotas);
  if (adapter.empty()) fail(ErrorKind::State, "fine-tuning needs an initialized adapter");
  std::vector<Tensor> images;
  LatentDataset data;
  for (const auto& it : dataset.items) {
    images.push_back(read_png(it.image));
    data.captions.push_back(it.caption);
  }
  data.latents = base.ae.encode(stack_images(images));

  OptimizerConfig opt;
  opt.lr = config.lr;
  opt.batch = config.batch;
  opt.cond_dropout = config.cond_dropout;
  opt.seed = derive_seed(config.seed, "finetune-stage" + std::to_string(dataset.stage));
  const nn::ParamList trainable = adapter.params();
  TrainTrace trace = train_epsilon(base.denoiser, data, base.schedule, config.steps, opt, &trainable, &adapter);

  auto& man = adapter.manifest();
  man.stage = dataset.stage;
  man.dataset_hash = dataset.hash();
  man.steps += config.steps;
  man.seed = config.seed;
  return trace;
}

nlohmann::json CandidateRecord::to_json() const {
  return {{"id", id}, {"image", image.string()}, {"seed", seed}, {"stage", stage}, {"prompt", prompt}};
}

CandidateRecord CandidateRecord::from_json(const nlohmann::json& j) {
  return {j.at("id").get<std::string>(), j.at("image").get<std::string>(), j.at("seed").get<std::uint64_t>(),
          j.at("stage").get<int>(), j.value("prompt", "")};
}

std::string candidate_id(int stage, std::uint64_t seed) { return "s" + std::to_string(stage) + "-" + std::to_string(seed); }

std::vector<CandidateRecord> generate_candidates(const ModelBundle& models, const LoraAdapter& adapter,
                                                 const std::string& prompt, int n, std::uint64_t seed, int stage,
                                                 const std::filesystem::path& out_dir, int inference_steps) {
  if (n <= 0) fail(ErrorKind::InvalidInput, "candidate count must be positive, got " + std::to_string(n));
  Vocabulary::standard().encode(prompt);
  std::filesystem::create_directories(out_dir);
  const DdimSampler sampler(models.schedule, inference_steps);
  const Tensor ctx = models.denoiser.context_for(prompt, 1).reshaped(
      {models.denoiser.config().context_length, models.denoiser.config().text_dim});
  const ModelCall call{&models.denoiser, ctx, {}, 1.0f, &adapter, {}};
  const int t_max = sampler.timesteps().back();

  std::vector<CandidateRecord> out;
  std::ofstream manifest(out_dir / "candidates.jsonl", std::ios::app);
  if (!manifest) fail(ErrorKind::Io, "cannot append to " + (out_dir / "candidates.jsonl").string());
  constexpr int kChunk = 8;
  for (int start = 0; start < n; start += kChunk) {
    const int m = std::min(kChunk, n - start);
    std::vector<Tensor> noise;
    for (int i = 0; i < m; ++i) {
      Rng rng(seed + static_cast<std::uint64_t>(start + i), "candidate");
      noise.push_back(rng.normal_tensor(models.ae.latent_shape(1)));
    }
    const Tensor images = models.ae.decode(sampler.sample(concat_batch(noise), t_max, call));
    for (int i = 0; i < m; ++i) {
      const std::uint64_t s = seed + static_cast<std::uint64_t>(start + i);
      CandidateRecord rec{candidate_id(stage, s), out_dir / (candidate_id(stage, s) + ".png"), s, stage, prompt};
      write_png(rec.image, image_at(images, i));
      manifest << rec.to_json().dump() << '\n';
      out.push_back(std::move(rec));
    }
  }
  manifest.flush();
  return out;
}

}  // namespace tristyle
