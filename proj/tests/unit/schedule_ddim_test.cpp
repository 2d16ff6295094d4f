#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "tristyle/ddim.hpp"
#include "tristyle/errors.hpp"
#include "tristyle/rng.hpp"

using namespace tristyle;

namespace {

// Independent alpha-bar for the linear schedule, accumulated in long double.
long double oracle_alpha_bar(int t, int steps = 1000, long double b0 = 1e-4L, long double b1 = 2e-2L) {
  long double ab = 1.0L;
  for (int i = 1; i <= t; ++i) ab *= 1.0L - (b0 + (b1 - b0) * (i - 1) / (steps - 1));
  return ab;
}

double scalar_ddim(double x, double eps, int t, int t_prev) {
  const double a = static_cast<double>(oracle_alpha_bar(t)), ap = static_cast<double>(oracle_alpha_bar(t_prev));
  const double x0 = (x - std::sqrt(1 - a) * eps) / std::sqrt(a);
  return std::sqrt(ap) * x0 + std::sqrt(1 - ap) * eps;
}

Tensor scalar(float v) { return Tensor({1}, {v}); }

}  // namespace

TEST(NoiseSchedule, LinearMatchesIndependentProduct) {
  const auto s = NoiseSchedule::linear();
  EXPECT_EQ(s.steps(), 1000);
  EXPECT_EQ(s.alpha_bar(0), 1.0);
  for (int t : {1, 2, 10, 250, 500, 999, 1000})
    EXPECT_NEAR(s.alpha_bar(t), static_cast<double>(oracle_alpha_bar(t)), 1e-12) << "t=" << t;
}

TEST(NoiseSchedule, AlphaBarStrictlyDecreasingInUnitInterval) {
  const auto s = NoiseSchedule::linear();
  for (int t = 1; t <= s.steps(); ++t) {
    ASSERT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    ASSERT_GT(s.alpha_bar(t), 0.0);
    ASSERT_LE(s.beta(t - 1 > 0 ? t - 1 : 1), s.beta(t));
  }
}

TEST(NoiseSchedule, RejectsBadBetas) {
  EXPECT_THROW(NoiseSchedule({0.1, 0.05}), Error);
  EXPECT_THROW(NoiseSchedule({0.0, 0.1}), Error);
  EXPECT_THROW(NoiseSchedule({0.5, 1.0}), Error);
  EXPECT_THROW(NoiseSchedule(std::vector<double>{}), Error);
}

TEST(NoiseSchedule, SubScheduleIsUniform) {
  const auto ts = NoiseSchedule::linear().sub_schedule(50);
  ASSERT_EQ(ts.size(), 51u);
  for (std::size_t i = 0; i < ts.size(); ++i) EXPECT_EQ(ts[i], static_cast<int>(20 * i));
}

TEST(NoiseSchedule, JsonRoundTrip) {
  const auto s = NoiseSchedule::linear(100, 1e-3, 5e-2);
  const auto r = NoiseSchedule::from_json(s.to_json());
  for (int t = 0; t <= 100; ++t) EXPECT_EQ(r.alpha_bar(t), s.alpha_bar(t));
}

// Property: chaining single forward steps has the closed-form marginal.
TEST(ForwardProcess, ChainMatchesClosedFormMarginal) {
  const auto s = NoiseSchedule::linear();
  Rng rng(7);
  const int n = 40000, t_end = 300;
  Tensor x(Shape{n}, 0.8f);
  for (int t = 1; t <= t_end; ++t) x = forward_single_step(s, x, t, rng.normal_tensor({n}));
  const double ab = s.alpha_bar(t_end);
  EXPECT_NEAR(mean(x), std::sqrt(ab) * 0.8, 0.02);
  EXPECT_NEAR(stddev(x) * stddev(x), 1.0 - ab, 0.03 * (1.0 - ab));

  const Tensor closed = forward_diffuse(s, Tensor(Shape{n}, 0.8f), t_end, Rng(8).normal_tensor({n}));
  EXPECT_NEAR(mean(closed), mean(x), 0.03);
  EXPECT_NEAR(stddev(closed), stddev(x), 0.02);
}

TEST(Ddim, StepMatchesScalarOracle) {
  const auto s = NoiseSchedule::linear();
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int t = rng.uniform_int(1, 1000), t_prev = rng.uniform_int(0, t - 1);
    const float x = rng.normal(), eps = rng.normal();
    const Tensor out = ddim_step(s, scalar(x), t, t_prev, scalar(eps));
    EXPECT_NEAR(out[0], scalar_ddim(x, eps, t, t_prev), 2e-5 * (1 + std::abs(scalar_ddim(x, eps, t, t_prev))))
        << "t=" << t << " t_prev=" << t_prev;
  }
}

TEST(Ddim, InvertStepUndoesStepForFixedEps) {
  const auto s = NoiseSchedule::linear();
  Rng rng(4);
  const Tensor x = rng.normal_tensor({2, 4, 4, 4}), eps = rng.normal_tensor({2, 4, 4, 4});
  for (auto [t, t_next] : std::vector<std::pair<int, int>>{{0, 20}, {400, 420}, {980, 1000}}) {
    const Tensor up = invert_step(s, x, t, t_next, eps);
    EXPECT_LT(max_abs_diff(ddim_step(s, up, t_next, t, eps), x), 1e-4f);
  }
}

TEST(Ddim, StepDirectionPreconditions) {
  const auto s = NoiseSchedule::linear();
  EXPECT_THROW(ddim_step(s, scalar(0), 10, 10, scalar(0)), Error);
  EXPECT_THROW(invert_step(s, scalar(0), 10, 5, scalar(0)), Error);
  EXPECT_THROW(ddim_step(s, Tensor({2}), 10, 0, scalar(0)), Error);
}

TEST(DdimSampler, TimestepAccess) {
  const DdimSampler sampler(NoiseSchedule::linear(), 50);
  EXPECT_EQ(sampler.inference_steps(), 50);
  EXPECT_EQ(sampler.timestep_at(0), 0);
  EXPECT_EQ(sampler.timestep_at(15), 300);
  EXPECT_EQ(sampler.timestep_at(50), 1000);
  EXPECT_TRUE(sampler.contains(600));
  EXPECT_FALSE(sampler.contains(601));
  try {
    sampler.timestep_at(51);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidInput);
  }
}

TEST(DdimSampler, ZeroStartIsIdentity) {
  const DdimSampler sampler(NoiseSchedule::linear(), 50);
  const Tensor x = Rng(1).normal_tensor({1, 4, 4, 4});
  int calls = 0;
  const Tensor out = sampler.sample(x, 0, [&](const Tensor& v, int) {
    ++calls;
    return Tensor::zeros_like(v);
  });
  EXPECT_TRUE(bit_equal(out, x));
  EXPECT_EQ(calls, 0);
  EXPECT_THROW(sampler.sample(x, 30, [](const Tensor& v, int) { return v; }), Error);
}

// With a model that predicts zero noise both directions are pure rescalings,
// so the round trip is exact up to float rounding.
TEST(DdimSampler, ZeroEpsRoundTrip) {
  const DdimSampler sampler(NoiseSchedule::linear(), 50);
  const Tensor x = Rng(2).normal_tensor({2, 4, 8, 8});
  auto zero = [](const Tensor& v, int) { return Tensor::zeros_like(v); };
  DdimTrajectory trace;
  const Tensor up = sampler.invert(x, zero, -1, &trace);
  EXPECT_EQ(trace.timesteps.front(), 0);
  EXPECT_EQ(trace.timesteps.back(), 1000);
  const Tensor back = sampler.sample(up, 1000, zero);
  EXPECT_LT(max_abs_diff(back, x), 1e-4f);
}

TEST(DdimSampler, InversionEvaluatesAtNextTimestep) {
  const DdimSampler sampler(NoiseSchedule::linear(), 10);
  std::vector<int> seen;
  sampler.invert(Tensor({1, 1, 2, 2}, 0.5f), [&](const Tensor& v, int t) {
    seen.push_back(t);
    return Tensor::zeros_like(v);
  }, 300);
  EXPECT_EQ(seen, (std::vector<int>{100, 200, 300}));
}

TEST(DdimSampler, NonFiniteLatentIsNumericalError) {
  const DdimSampler sampler(NoiseSchedule::linear(), 10);
  try {
    sampler.sample(Tensor({1, 1, 2, 2}, 1.0f), 1000, [](const Tensor& v, int) {
      Tensor e = Tensor::zeros_like(v);
      e[0] = std::nanf("");
      return e;
    });
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Numerical);
  }
}
