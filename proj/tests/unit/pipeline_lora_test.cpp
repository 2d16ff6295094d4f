#include <set>

#include <gtest/gtest.h>

#include "curation_fixture.hpp"
#include "tiny_models.hpp"
#include "tristyle/errors.hpp"
#include "tristyle/image_io.hpp"
#include "tristyle/lora_finetune.hpp"
#include "tristyle/synth.hpp"
#include "tristyle/triple_pipeline.hpp"

using namespace tristyle;
using fixtures::TempDir;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::Io;
}

PipelineConfig small_config(const ModelBundle& m) {
  auto c = PipelineConfig::defaults(m.denoiser.config());
  c.inference_steps = 10;
  c.t_s_small = 3;
  c.t_s_large = 6;
  c.prompt = "a blue house";
  c.seed = 5;
  return c;
}

bool identical(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

}  // namespace

TEST(LoraAdapter, FreshAdapterContributesNothing) {
  const auto m = fixtures::tiny_bundle(1);
  const auto lora = LoraAdapter::create(m.denoiser.lora_targets(), 4, 1.0f, 7);
  Rng rng(2);
  const Tensor x = rng.normal_tensor({2, 4, 16, 16});
  const Tensor ctx = m.denoiser.context_for("a red boat", 2);
  EXPECT_TRUE(identical(m.denoiser.predict_noise(x, 400, ctx), m.denoiser.predict_noise(x, 400, ctx, {}, &lora)));
}

TEST(LoraAdapter, EffectiveWeightMatchesLowRankOracle) {
  const auto m = fixtures::tiny_bundle(1);
  auto lora = LoraAdapter::create(m.denoiser.lora_targets(), 2, 0.5f, 7);
  const std::string layer = lora.target_layers().at(0);
  auto* pair = const_cast<LoraPair*>(lora.find(layer));
  Rng rng(3);
  pair->b.mutable_value() = rng.normal_tensor(pair->b.shape());
  const Tensor& a = pair->a.value();
  const Tensor& b = pair->b.value();
  const int out = b.dim(0), in = a.dim(1), r = a.dim(0);
  Tensor w = rng.normal_tensor({out, in});
  const Tensor eff = apply_adapter(w, lora, layer);
  for (int o = 0; o < out; ++o)
    for (int i = 0; i < in; ++i) {
      double d = 0;
      for (int k = 0; k < r; ++k) d += static_cast<double>(b[o * r + k]) * a[k * in + i];
      EXPECT_NEAR(eff[o * in + i], w[o * in + i] + 0.5 * d, 1e-5);
    }
}

TEST(LoraFinetune, TrainsAdapterOnlyAndLeavesBaseUntouched) {
  TempDir dir("ft");
  const auto m = fixtures::tiny_bundle(2);
  const Scene s = reference_style_scene();
  write_png(dir / "ref.png", s.image);
  const StageDataset ds{1, {{"ref", dir / "ref.png", "a blue house beside a tree"}}};
  FinetuneConfig cfg;
  cfg.steps = 6;
  cfg.batch = 2;
  cfg.rank = 2;
  cfg.seed = 1;
  auto lora = fresh_adapter(m.denoiser, cfg);
  const auto base_before = nn::checksum(m.denoiser.params());
  const auto ae_before = nn::checksum(m.ae.params());
  const auto trace = finetune_stage(m, lora, ds, cfg, {5, 5});
  EXPECT_EQ(trace.losses.size(), 6u);
  EXPECT_EQ(nn::checksum(m.denoiser.params()), base_before);
  EXPECT_EQ(nn::checksum(m.ae.params()), ae_before);
  float b_norm = 0;
  for (const auto& p : lora.params())
    if (p.name.ends_with("lora_b"))
      for (float v : p.var.value().values()) b_norm += std::abs(v);
  EXPECT_GT(b_norm, 0.0f);
  EXPECT_EQ(lora.manifest().stage, 1);
  EXPECT_EQ(lora.manifest().dataset_hash, ds.hash());
}

TEST(LoraFinetune, RejectsWrongStageSize) {
  TempDir dir("ft-bad");
  const auto m = fixtures::tiny_bundle(2);
  write_png(dir / "a.png", Tensor({3, 64, 64}, 0.5f));
  const StageDataset ds{2, {{"a", dir / "a.png", "a dog"}}};
  FinetuneConfig cfg;
  auto lora = fresh_adapter(m.denoiser, cfg);
  EXPECT_EQ(kind_of([&] { finetune_stage(m, lora, ds, cfg, {5, 5}); }), ErrorKind::InvalidInput);
}

TEST(LoraFinetune, NestingValidation) {
  const StageItem r{"ref", "r.png", "x"}, a{"a", "a.png", "y"}, b{"b", "b.png", "z"};
  EXPECT_NO_THROW(validate_nesting({1, {r}}, {2, {r, a}}));
  EXPECT_THROW(validate_nesting({1, {r}}, {2, {a, b}}), Error);
  EXPECT_THROW(validate_nesting({1, {r}}, {3, {r, a}}), Error);
  EXPECT_EQ(FinetuneConfig::default_steps(1), 1000);
  EXPECT_EQ(FinetuneConfig::default_steps(2), 800);
}

TEST(Pipeline, ReductionToImg2ImgIsBitExact) {
  const auto m = fixtures::tiny_bundle(3);
  const auto lora = LoraAdapter::create(m.denoiser.lora_targets(), 4, 1.0f, 9);
  const TriplePipeline pipe(m, &lora);
  auto cfg = small_config(m);
  cfg.policy.swap_kv = false;
  cfg.policy.fuse_query = false;
  const Tensor content = fixtures::random_images(2, 4);
  const auto out = pipe.image_style_transfer(content, cfg);
  const Tensor base = pipe.img2img(content, {cfg.prompt, cfg.prompt}, cfg.t_s_small, cfg.inference_steps, cfg.seed);
  EXPECT_TRUE(identical(out.images, base));
}

TEST(Pipeline, InjectionChangesOutputAndIsDeterministic) {
  const auto m = fixtures::tiny_bundle(3);
  const auto lora = LoraAdapter::create(m.denoiser.lora_targets(), 4, 1.0f, 9);
  const TriplePipeline pipe(m, &lora);
  const auto cfg = small_config(m);
  const Tensor content = fixtures::random_images(1, 4);
  const auto a = pipe.image_style_transfer(content, cfg);
  const auto b = pipe.image_style_transfer(content, cfg);
  EXPECT_TRUE(identical(a.images, b.images));
  const Tensor base = pipe.img2img(content, {cfg.prompt}, cfg.t_s_small, cfg.inference_steps, cfg.seed);
  EXPECT_GT(max_abs_diff(a.images, base), 0.0f);
  std::set<std::string> roles;
  for (const auto& p : a.passes) roles.insert(p.role);
  EXPECT_TRUE(roles.count("style") && roles.count("inversion") && roles.count("main"));
}

TEST(Pipeline, BatchedEqualsPerImage) {
  const auto m = fixtures::tiny_bundle(3);
  const auto lora = LoraAdapter::create(m.denoiser.lora_targets(), 4, 1.0f, 9);
  const TriplePipeline pipe(m, &lora);
  auto cfg = small_config(m);
  const Tensor content = fixtures::random_images(2, 8);
  const auto both = pipe.image_style_transfer(content, cfg);
  cfg.seed += 1;
  const auto second = pipe.image_style_transfer(image_at(content, 1), cfg);
  EXPECT_LT(max_abs_diff(image_at(both.images, 1), image_at(second.images, 0)), 1e-5f);
}

TEST(Pipeline, ThresholdsValidatedBeforeCompute) {
  const auto m = fixtures::tiny_bundle(3);
  const TriplePipeline pipe(m, nullptr);
  auto cfg = small_config(m);
  cfg.use_lora = false;
  for (auto [s, l] : std::vector<std::pair<int, int>>{{6, 3}, {3, 3}, {0, 4}, {3, 11}}) {
    cfg.t_s_small = s;
    cfg.t_s_large = l;
    try {
      // Wrong image shape would also fail; the threshold error must win.
      pipe.image_style_transfer(Tensor({1, 1, 1}), cfg);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::InvalidInput);
      EXPECT_EQ(e.details().at("invariant"), "0 < t_s_small < t_s_large <= T");
    }
  }
  cfg.t_s_small = 3;
  cfg.t_s_large = 6;
  cfg.policy.beta = 1.5f;
  EXPECT_EQ(kind_of([&] { pipe.image_style_transfer(fixtures::random_images(1, 1), cfg); }), ErrorKind::InvalidInput);
}

TEST(Pipeline, MissingLoraIsStateError) {
  const auto m = fixtures::tiny_bundle(3);
  const TriplePipeline pipe(m, nullptr);
  const auto cfg = small_config(m);
  EXPECT_EQ(kind_of([&] { pipe.image_style_transfer(fixtures::random_images(1, 1), cfg); }), ErrorKind::State);
}

TEST(Pipeline, ColorEditNeedsAColor) {
  const auto m = fixtures::tiny_bundle(3);
  const auto lora = LoraAdapter::create(m.denoiser.lora_targets(), 4, 1.0f, 9);
  const TriplePipeline pipe(m, &lora);
  const auto cfg = small_config(m);
  EXPECT_EQ(kind_of([&] { pipe.color_edit(fixtures::random_images(1, 1), "a house", cfg); }),
            ErrorKind::InvalidInput);
  EXPECT_NO_THROW(pipe.color_edit(fixtures::random_images(1, 1), "a red house", cfg));
  EXPECT_EQ(kind_of([&] { pipe.text_stylization(fixtures::random_images(1, 1), "a zebra", cfg); }),
            ErrorKind::InvalidInput);
}

TEST(Pipeline, SweepHandlesAdjacentThresholds) {
  const auto m = fixtures::tiny_bundle(3);
  const auto lora = LoraAdapter::create(m.denoiser.lora_targets(), 4, 1.0f, 9);
  const TriplePipeline pipe(m, &lora);
  const auto cfg = small_config(m);
  const PerceptualDistance pd(&m.ae, &m.denoiser);
  const ColorJointEmbedder emb;
  const auto report =
      pipe.threshold_sweep(fixtures::random_images(2, 2), {{5, 6}, {2, 6}}, cfg, fixtures::random_images(2, 3), emb, pd);
  ASSERT_EQ(report.rows.size(), 2u);
  EXPECT_EQ(report.rows[0].t_s_small, 5);
  EXPECT_EQ(report.rows[0].per_image_content.size(), 2u);
  EXPECT_NE(report.csv().find("t_s_small"), std::string::npos);
}
