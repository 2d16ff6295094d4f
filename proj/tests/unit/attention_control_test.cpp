#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "tiny_models.hpp"
#include "tristyle/attention_control.hpp"
#include "tristyle/errors.hpp"
#include "tristyle/rng.hpp"

using namespace tristyle;

using fixtures::brute_attention;
using fixtures::uniform_tensor;

TEST(FuseQueries, EndpointsAreBitExact) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor qi = rng.normal_tensor({2, 16, 8}), qs = rng.normal_tensor({2, 16, 8});
    EXPECT_TRUE(bit_equal(fuse_queries(qi, qs, 0.0f), qs));
    EXPECT_TRUE(bit_equal(fuse_queries(qi, qs, 1.0f), qi));
  }
}

TEST(FuseQueries, LinearInBeta) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor qi = uniform_tensor(rng, {3, 5}), qs = uniform_tensor(rng, {3, 5});
    const float beta = rng.uniform();
    const Tensor f = fuse_queries(qi, qs, beta);
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double expect = double(beta) * qi[i] + (1.0 - double(beta)) * qs[i];
      ASSERT_NEAR(f[i], expect, 1e-7) << "beta=" << beta;
    }
  }
}

TEST(FuseQueries, Rejections) {
  const Tensor a({2, 3}), b({3, 2});
  EXPECT_THROW(fuse_queries(a, b, 0.5f), Error);
  EXPECT_THROW(fuse_queries(a, a, -0.1f), Error);
  EXPECT_THROW(fuse_queries(a, a, 1.5f), Error);
  EXPECT_THROW(fuse_queries(a, a, std::nanf("")), Error);
}

TEST(StyledAttention, MatchesBruteForceOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int heads = rng.uniform_int(1, 3), d = rng.uniform_int(1, 4);
    const int tq = rng.uniform_int(1, 6), tk = rng.uniform_int(1, 6);
    const float scale = rng.uniform(0.1f, 1.5f);
    const Tensor q = uniform_tensor(rng, {tq, heads * d}), k = uniform_tensor(rng, {tk, heads * d});
    const Tensor v = uniform_tensor(rng, {tk, heads * d});
    const Tensor out = styled_attention(q, k, v, heads, scale);
    const auto ref = brute_attention(q, k, v, heads, scale);
    ASSERT_EQ(out.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(out[i], ref[i], 1e-6) << "trial " << trial;
  }
}

TEST(StyledAttention, TwoTokenSingleHandWorked) {
  const Tensor q({2, 1}, {1.0f, -1.0f}), k({2, 1}, {0.5f, 2.0f}), v({2, 1}, {3.0f, -1.0f});
  const Tensor out = styled_attention(q, k, v, 1, 1.0f);
  const double w0 = std::exp(0.5) / (std::exp(0.5) + std::exp(2.0));
  const double w1 = std::exp(-0.5) / (std::exp(-0.5) + std::exp(-2.0));
  EXPECT_NEAR(out[0], w0 * 3.0 + (1 - w0) * -1.0, 1e-6);
  EXPECT_NEAR(out[1], w1 * 3.0 + (1 - w1) * -1.0, 1e-6);
}

TEST(StyledAttention, SaturatedSoftmaxSelectsValues) {
  Rng rng(4);
  const int t = 4;
  Tensor k({t, t});
  for (int i = 0; i < t; ++i) k[i * t + i] = 1.0f;
  const Tensor q = k;  // query i matches key i only
  const Tensor v = rng.normal_tensor({t, t});
  const Tensor out = styled_attention(q, k, v, 1, 200.0f);
  EXPECT_LT(max_abs_diff(out, v), 1e-5f);
}

TEST(StyledAttention, ZerosGiveZeros) {
  const Tensor z({5, 4});
  const Tensor out = styled_attention(z, z, z, 2, 0.5f);
  for (float x : out.values()) EXPECT_EQ(x, 0.0f);
}

TEST(StyledAttention, BatchedMatchesPerSample) {
  Rng rng(5);
  const Tensor q = rng.normal_tensor({2, 3, 4}), k = rng.normal_tensor({2, 5, 4}), v = rng.normal_tensor({2, 5, 4});
  const Tensor out = styled_attention(q, k, v, 2, 0.5f);
  for (int n = 0; n < 2; ++n) {
    const Tensor one = styled_attention(q.slice_batch(n, n + 1).reshaped({3, 4}), k.slice_batch(n, n + 1).reshaped({5, 4}),
                                        v.slice_batch(n, n + 1).reshaped({5, 4}), 2, 0.5f);
    EXPECT_LT(max_abs_diff(out.slice_batch(n, n + 1).reshaped({3, 4}), one), 1e-6f);
  }
}

TEST(StyledAttention, KeyValueTokenMismatchRejected) {
  try {
    styled_attention(Tensor({2, 4}), Tensor({3, 4}), Tensor({2, 4}), 1, 1.0f);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidInput);
  }
}

TEST(AttentionCache, StoreFindAndErrors) {
  AttentionCache cache;
  cache.store("up0.attn0", 40, {Tensor({1, 2, 2}, 1.0f), {}, {}});
  EXPECT_NE(cache.find("up0.attn0", 40), nullptr);
  EXPECT_EQ(cache.find("up0.attn0", 60), nullptr);
  EXPECT_THROW(cache.store("up0.attn0", 40, {}), Error);
  try {
    cache.at("up1.attn1", 20);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::State);
    EXPECT_NE(std::string(e.what()).find("up1.attn1"), std::string::npos);
  }
  Tensor bad({1}, 0.0f);
  bad[0] = std::nanf("");
  try {
    cache.store("x", 0, {bad, {}, {}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Numerical);
  }
}

TEST(InjectionPolicy, DefaultsAndValidation) {
  const auto cfg = fixtures::tiny_denoiser_config();
  auto p = InjectionPolicy::defaults(cfg);
  EXPECT_EQ(p.target_layers, cfg.decoder_attention_layers());
  EXPECT_FLOAT_EQ(p.beta, 0.6f);
  EXPECT_NO_THROW(p.validate(cfg));
  EXPECT_TRUE(p.active(p.target_layers.front(), 500));
  p.swap_kv = p.fuse_query = false;
  EXPECT_FALSE(p.active(p.target_layers.front(), 500));
  auto q = InjectionPolicy::defaults(cfg);
  q.target_layers = {"down0.attn0"};
  EXPECT_THROW(q.validate(cfg), Error);
  q = InjectionPolicy::defaults(cfg);
  q.beta = 1.2f;
  EXPECT_THROW(q.validate(cfg), Error);
  q = InjectionPolicy::defaults(cfg);
  q.t_min = 200;
  q.t_max = 400;
  EXPECT_FALSE(q.active(q.target_layers.front(), 100));
  const auto r = InjectionPolicy::from_json(q.to_json(), cfg);
  EXPECT_EQ(r.to_json(), q.to_json());
}

TEST(Hooks, CaptureThenInjectSwapsAndFuses) {
  AttentionCache style, inversion;
  CaptureHook cap_s(style, {"L"}, false, true), cap_i(inversion, {"L"}, true, false);
  Rng rng(6);
  Tensor qs = rng.normal_tensor({1, 4, 2}), ks = rng.normal_tensor({1, 4, 2}), vs = rng.normal_tensor({1, 4, 2});
  Tensor qi = rng.normal_tensor({1, 4, 2}), ki = ks, vi = vs;
  cap_s.on_self_attention({"L", 100, true}, qs, ks, vs);
  cap_s.on_self_attention({"other", 100, true}, qs, ks, vs);
  cap_i.on_self_attention({"L", 100, true}, qi, ki, vi);
  EXPECT_EQ(style.size(), 1u);
  EXPECT_TRUE(style.at("L", 100).q.empty());
  EXPECT_TRUE(inversion.at("L", 100).k.empty());

  InjectionPolicy p;
  p.target_layers = {"L"};
  p.beta = 0.25f;
  InjectHook inject = install(p, {&style, &inversion});
  Tensor q = rng.normal_tensor({1, 4, 2}), k = rng.normal_tensor({1, 4, 2}), v = rng.normal_tensor({1, 4, 2});
  const Tensor q_main = q;
  inject.on_self_attention({"L", 100, true}, q, k, v);
  EXPECT_TRUE(bit_equal(k, style.at("L", 100).k));
  EXPECT_TRUE(bit_equal(v, style.at("L", 100).v));
  EXPECT_TRUE(bit_equal(q, fuse_queries(inversion.at("L", 100).q, q_main, 0.25f)));

  Tensor q2 = q_main, k2({1, 4, 2}), v2({1, 4, 2});
  EXPECT_THROW(inject.on_self_attention({"L", 120, true}, q2, k2, v2), Error);
  EXPECT_THROW(InjectHook(p, nullptr, &inversion), Error);
}

TEST(Adain, MatchesTargetStatistics) {
  Rng rng(7);
  const Tensor c = rng.normal_tensor({2, 3, 8, 8}), s = rng.normal_tensor({2, 3, 8, 8}, 3.0f);
  const Tensor out = adain(c, s);
  for (int n = 0; n < 2; ++n)
    for (int ch = 0; ch < 3; ++ch) {
      double mo = 0, ms = 0;
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          mo += out.at(n, ch, y, x);
          ms += s.at(n, ch, y, x);
        }
      EXPECT_NEAR(mo / 64, ms / 64, 1e-4);
    }
}
