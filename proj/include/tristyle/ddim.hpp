#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "tristyle/denoiser.hpp"
#include "tristyle/schedule.hpp"

namespace tristyle {

// Deterministic (eta = 0) update from t to t_prev < t.
Tensor ddim_step(const NoiseSchedule& schedule, const Tensor& x_t, int t, int t_prev, const Tensor& eps);
// The same recurrence run upward, from t to t_next > t.
Tensor invert_step(const NoiseSchedule& schedule, const Tensor& x_t, int t, int t_next, const Tensor& eps);

using EpsFn = std::function<Tensor(const Tensor& x, int t)>;

// A conditioned denoiser call. With guidance != 1 and an unconditional
// context, conditional and unconditional predictions run as one batch
// [uncond; cond] so hooks observe both halves consistently.
struct ModelCall {
  const Denoiser* model = nullptr;
  Tensor context;  // [L, D] or per sample [N, L, D]
  Tensor uncond;   // same layout, only used when guidance != 1
  float guidance = 1.0f;
  const LoraAdapter* lora = nullptr;
  HookList hooks;

  Tensor operator()(const Tensor& x, int t) const;
};

struct DdimTrajectory {
  enum class Direction { Denoise, Invert };

  Direction direction = Direction::Denoise;
  std::vector<int> timesteps;  // visited, including the start
  std::vector<Tensor> latents;  // parallel to timesteps when retained

  // Zlib-compressed checkpoint archive with one tensor per step.
  void save(const std::filesystem::path& path) const;
};

class DdimSampler {
 public:
  DdimSampler(const NoiseSchedule& schedule, int inference_steps = 50);

  const NoiseSchedule& schedule() const { return schedule_; }
  int inference_steps() const { return static_cast<int>(timesteps_.size()) - 1; }
  // Ascending {0, ..., T}.
  const std::vector<int>& timesteps() const { return timesteps_; }
  int timestep_at(int index) const;
  bool contains(int t) const;

  // Denoises from timestep t_start (in the sub-schedule) to 0.
  Tensor sample(const Tensor& x_start, int t_start, const EpsFn& eps, DdimTrajectory* trace = nullptr) const;
  // Inverts a clean latent up to t_end (defaults to T). The step t -> t_next
  // evaluates the model at (x_t, t_next).
  Tensor invert(const Tensor& x0, const EpsFn& eps, int t_end = -1, DdimTrajectory* trace = nullptr) const;

 private:
  int index_of(int t) const;

  NoiseSchedule schedule_;
  std::vector<int> timesteps_;
};

}  // namespace tristyle
