#include "tristyle/schedule.hpp"

#include <cmath>

#include "tristyle/errors.hpp"

namespace tristyle {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  require(!betas_.empty(), "noise schedule needs at least one step");
  for (std::size_t i = 0; i < betas_.size(); ++i) {
    require(betas_[i] > 0.0 && betas_[i] < 1.0, "beta values must lie in (0, 1)");
    require(i == 0 || betas_[i] >= betas_[i - 1], "beta values must be non-decreasing");
  }
  alpha_bars_.resize(betas_.size() + 1);
  alpha_bars_[0] = 1.0;
  for (std::size_t i = 0; i < betas_.size(); ++i) alpha_bars_[i + 1] = alpha_bars_[i] * (1.0 - betas_[i]);
}

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  require(steps >= 1, "schedule step count must be positive");
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i)
    betas[static_cast<std::size_t>(i)] =
        steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * static_cast<double>(i) / (steps - 1);
  return NoiseSchedule(std::move(betas));
}

double NoiseSchedule::beta(int t) const {
  require(t >= 1 && t <= steps(), "beta index out of range");
  return betas_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha(int t) const { return 1.0 - beta(t); }

double NoiseSchedule::alpha_bar(int t) const {
  require(t >= 0 && t <= steps(), "timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps()) + "]");
  return alpha_bars_[static_cast<std::size_t>(t)];
}

std::vector<int> NoiseSchedule::sub_schedule(int count) const {
  require(count >= 1 && count <= steps() && steps() % count == 0,
          "sub-schedule count must divide the training step count");
  const int stride = steps() / count;
  std::vector<int> ts;
  for (int k = 0; k <= count; ++k) ts.push_back(k * stride);
  return ts;
}

nlohmann::json NoiseSchedule::to_json() const { return {{"kind", "explicit"}, {"betas", betas_}}; }

NoiseSchedule NoiseSchedule::from_json(const nlohmann::json& j) {
  return NoiseSchedule(j.at("betas").get<std::vector<double>>());
}

Tensor forward_diffuse(const NoiseSchedule& schedule, const Tensor& x0, int t, const Tensor& noise) {
  require(t >= 0 && t <= schedule.steps(), "timestep " + std::to_string(t) + " out of range");
  require(same_shape(x0, noise), "noise shape " + shape_string(noise.shape()) + " does not match latent " +
                                     shape_string(x0.shape()));
  if (t == 0) return x0;
  const double ab = schedule.alpha_bar(t);
  const float a = static_cast<float>(std::sqrt(ab));
  const float b = static_cast<float>(std::sqrt(1.0 - ab));
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * noise[i];
  return out;
}

Tensor forward_single_step(const NoiseSchedule& schedule, const Tensor& x_prev, int t, const Tensor& noise) {
  require(same_shape(x_prev, noise), "noise shape mismatch");
  const double beta = schedule.beta(t);
  const float a = static_cast<float>(std::sqrt(1.0 - beta));
  const float b = static_cast<float>(std::sqrt(beta));
  Tensor out(x_prev.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x_prev[i] + b * noise[i];
  return out;
}

}  // namespace tristyle
