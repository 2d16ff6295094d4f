#pragma once

#include <vector>

#include <json.hpp>

#include "tristyle/tensor.hpp"

namespace tristyle {

// Discrete DDPM schedule over steps 1..T. alpha_bar(0) == 1 by definition.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  // betas[i] is beta_{i+1}; must satisfy 0 < beta_1 <= ... <= beta_T < 1.
  explicit NoiseSchedule(std::vector<double> betas);
  static NoiseSchedule linear(int steps = 1000, double beta_start = 1e-4, double beta_end = 2e-2);

  int steps() const { return static_cast<int>(betas_.size()); }
  double beta(int t) const;
  double alpha(int t) const;
  double alpha_bar(int t) const;
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

  // Uniform-stride DDIM sub-schedule {0, s, 2s, ..., T} with `count` steps.
  std::vector<int> sub_schedule(int count) const;

  nlohmann::json to_json() const;
  static NoiseSchedule from_json(const nlohmann::json& j);

 private:
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;  // index 0..T
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, closed form.
Tensor forward_diffuse(const NoiseSchedule& schedule, const Tensor& x0, int t, const Tensor& noise);

// One ancestral forward step q(x_t | x_{t-1}) with explicit noise.
Tensor forward_single_step(const NoiseSchedule& schedule, const Tensor& x_prev, int t, const Tensor& noise);

}  // namespace tristyle
