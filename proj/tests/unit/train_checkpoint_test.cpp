#include <fstream>

#include <gtest/gtest.h>

#include "tiny_models.hpp"
#include "tristyle/checkpoint.hpp"
#include "tristyle/errors.hpp"
#include "tristyle/models.hpp"
#include "tristyle/train.hpp"

using namespace tristyle;
using fixtures::TempDir;

TEST(Adam, FirstStepMovesByLearningRate) {
  ag::Var w = ag::parameter(Tensor({3}, 1.0f));
  nn::ParamList params = {{"w", w}};
  OptimizerConfig cfg;
  cfg.lr = 0.1f;
  cfg.grad_clip = 0.0f;
  Adam opt(params, cfg);
  opt.zero_grad();
  ag::backward(ag::mse_loss(w, ag::constant(Tensor(w.shape()))));
  opt.step();
  // Bias-corrected Adam moves each coordinate by lr * sign(g) on the first step.
  for (float v : w.value().values()) EXPECT_NEAR(v, 0.9f, 1e-5f);
}

TEST(Adam, MinimizesQuadratic) {
  ag::Var w = ag::parameter(Tensor({4}, 3.0f));
  nn::ParamList params = {{"w", w}};
  OptimizerConfig cfg;
  cfg.lr = 0.05f;
  Adam opt(params, cfg);
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    ag::backward(ag::mse_loss(w, ag::constant(Tensor(w.shape()))));
    opt.step();
  }
  for (float v : w.value().values()) EXPECT_LT(std::abs(v), 0.05f);
}

TEST(Checkpoint, RoundTripPlainAndCompressed) {
  TempDir dir("ckpt");
  Rng rng(1);
  Checkpoint c;
  c.manifest = {{"kind", "test"}};
  c.tensors = {{"a", rng.normal_tensor({2, 3})}, {"b", rng.normal_tensor({5})}};
  for (bool z : {false, true}) {
    const auto path = dir / (z ? "c.z" : "c.raw");
    save_checkpoint(path, c, z);
    const auto back = load_checkpoint(path);
    EXPECT_EQ(back.manifest, c.manifest);
    ASSERT_EQ(back.tensors.size(), 2u);
    EXPECT_EQ(max_abs_diff(*back.find("a"), c.tensors[0].second), 0.0f);
    EXPECT_EQ(back.find("missing"), nullptr);
  }
  EXPECT_THROW(load_checkpoint(dir / "nope"), Error);
  {
    std::ofstream os(dir / "junk", std::ios::binary);
    os << "not a checkpoint at all";
  }
  EXPECT_THROW(load_checkpoint(dir / "junk"), Error);
}

TEST(Checkpoint, ModelsRoundTrip) {
  TempDir dir("models");
  const auto m = fixtures::tiny_bundle(5);
  save_autoencoder(dir / "ae.ckpt", m.ae);
  save_denoiser(dir / "den.ckpt", m.denoiser, m.schedule);
  auto lora = LoraAdapter::create(m.denoiser.lora_targets(), 3, 0.7f, 2);
  lora.manifest().stage = 2;
  save_lora(dir / "lora.ckpt", lora);
  EXPECT_EQ(nn::checksum(load_autoencoder(dir / "ae.ckpt").params()), nn::checksum(m.ae.params()));
  NoiseSchedule sched;
  EXPECT_EQ(nn::checksum(load_denoiser(dir / "den.ckpt", &sched).params()), nn::checksum(m.denoiser.params()));
  EXPECT_EQ(sched.steps(), m.schedule.steps());
  const auto back = load_lora(dir / "lora.ckpt");
  EXPECT_EQ(back.rank(), 3);
  EXPECT_FLOAT_EQ(back.scale(), 0.7f);
  EXPECT_EQ(back.manifest().stage, 2);
  EXPECT_EQ(nn::checksum(back.params()), nn::checksum(lora.params()));
}

TEST(Training, DenoiserLossDecreasesOnTinyData) {
  auto m = fixtures::tiny_bundle(6);
  Rng rng(3);
  LatentDataset data{rng.normal_tensor({4, 4, 16, 16}, 0.5f), {"a red boat", "a blue house", "a dog", "a tree"}};
  OptimizerConfig cfg;
  cfg.lr = 3e-3f;
  cfg.batch = 4;
  const auto trace = train_denoiser(m.denoiser, data, m.schedule, 120, cfg);
  EXPECT_LT(trace.smoothed_final(20), trace.smoothed_initial(20));
}

TEST(Training, AutoencoderNormalizesLatentScale) {
  AutoencoderConfig ac;
  ac.hidden = 16;
  ac.mid = 8;
  Autoencoder ae(ac, 4);
  const Tensor imgs = fixtures::random_images(8, 2);
  OptimizerConfig cfg;
  cfg.lr = 2e-3f;
  const auto trace = train_autoencoder(ae, imgs, 60, cfg);
  EXPECT_LT(trace.smoothed_final(10), trace.smoothed_initial(10));
  const Tensor z = ae.encode(imgs);
  double ss = 0;
  for (float v : z.values()) ss += double(v) * v;
  EXPECT_NEAR(std::sqrt(ss / static_cast<double>(z.size())), 1.0, 1e-3);
}
