#include "tristyle/ddim.hpp"

#include <algorithm>
#include <cmath>

#include "tristyle/checkpoint.hpp"
#include "tristyle/errors.hpp"

namespace tristyle {

namespace {

Tensor transfer(const NoiseSchedule& schedule, const Tensor& x, int from, int to, const Tensor& eps) {
  require(eps.shape() == x.shape(),
          "eps shape " + shape_string(eps.shape()) + " does not match latent " + shape_string(x.shape()));
  require(from >= 0 && from <= schedule.steps() && to >= 0 && to <= schedule.steps(), "timestep out of range");
  const double ab_from = schedule.alpha_bar(from), ab_to = schedule.alpha_bar(to);
  const double sa = std::sqrt(ab_from), sb = std::sqrt(1.0 - ab_from);
  const double ta = std::sqrt(ab_to), tb = std::sqrt(1.0 - ab_to);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = (x[i] - sb * eps[i]) / sa;
    out[i] = static_cast<float>(ta * x0 + tb * eps[i]);
  }
  return out;
}

}  // namespace

Tensor ddim_step(const NoiseSchedule& schedule, const Tensor& x_t, int t, int t_prev, const Tensor& eps) {
  if (t <= t_prev)
    fail(ErrorKind::InvalidInput, "ddim_step requires t > t_prev, got t=" + std::to_string(t) +
                                      " t_prev=" + std::to_string(t_prev));
  return transfer(schedule, x_t, t, t_prev, eps);
}

Tensor invert_step(const NoiseSchedule& schedule, const Tensor& x_t, int t, int t_next, const Tensor& eps) {
  if (t_next <= t)
    fail(ErrorKind::InvalidInput, "invert_step requires t_next > t, got t=" + std::to_string(t) +
                                      " t_next=" + std::to_string(t_next));
  return transfer(schedule, x_t, t, t_next, eps);
}

Tensor ModelCall::operator()(const Tensor& x, int t) const {
  if (!model) fail(ErrorKind::State, "model call without a model");
  if (guidance == 1.0f || uncond.empty()) return model->predict_noise(x, t, context, hooks, lora);
  const int n = x.dim(0);
  const Tensor both = concat_batch(std::vector<Tensor>{x, x});
  auto per_sample = [n](const Tensor& c) {
    if (c.rank() == 3) return c;
    std::vector<Tensor> rows(static_cast<std::size_t>(n), c.reshaped({1, c.dim(0), c.dim(1)}));
    return concat_batch(rows);
  };
  std::vector<Tensor> ctx{per_sample(uncond), per_sample(context)};
  const Tensor eps = model->predict_noise(both, t, concat_batch(ctx), hooks, lora);
  const Tensor eu = eps.slice_batch(0, n), ec = eps.slice_batch(n, 2 * n);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = eu[i] + guidance * (ec[i] - eu[i]);
  return out;
}

void DdimTrajectory::save(const std::filesystem::path& path) const {
  Checkpoint ckpt;
  ckpt.manifest = {{"direction", direction == Direction::Denoise ? "denoise" : "invert"}, {"timesteps", timesteps}};
  for (std::size_t i = 0; i < latents.size(); ++i)
    ckpt.tensors.emplace_back("step" + std::to_string(i) + ".t" + std::to_string(timesteps[i]), latents[i]);
  save_checkpoint(path, ckpt, true);
}

DdimSampler::DdimSampler(const NoiseSchedule& schedule, int inference_steps)
    : schedule_(schedule), timesteps_(schedule.sub_schedule(inference_steps)) {}

int DdimSampler::timestep_at(int index) const {
  if (index < 0 || index > inference_steps())
    fail(ErrorKind::InvalidInput, "inference step index " + std::to_string(index) + " outside [0, " +
                                      std::to_string(inference_steps()) + "]");
  return timesteps_[static_cast<std::size_t>(index)];
}

bool DdimSampler::contains(int t) const { return std::binary_search(timesteps_.begin(), timesteps_.end(), t); }

int DdimSampler::index_of(int t) const {
  const auto it = std::lower_bound(timesteps_.begin(), timesteps_.end(), t);
  if (it == timesteps_.end() || *it != t)
    fail(ErrorKind::InvalidInput, "timestep " + std::to_string(t) + " is not in the inference sub-schedule");
  return static_cast<int>(it - timesteps_.begin());
}

Tensor DdimSampler::sample(const Tensor& x_start, int t_start, const EpsFn& eps, DdimTrajectory* trace) const {
  int i = index_of(t_start);
  Tensor x = x_start;
  if (trace) {
    trace->direction = DdimTrajectory::Direction::Denoise;
    trace->timesteps = {t_start};
    trace->latents = {x};
  }
  for (; i > 0; --i) {
    const int t = timesteps_[static_cast<std::size_t>(i)], t_prev = timesteps_[static_cast<std::size_t>(i - 1)];
    x = ddim_step(schedule_, x, t, t_prev, eps(x, t));
    if (!x.all_finite()) fail(ErrorKind::Numerical, "non-finite latent at timestep " + std::to_string(t_prev));
    if (trace) {
      trace->timesteps.push_back(t_prev);
      trace->latents.push_back(x);
    }
  }
  return x;
}

Tensor DdimSampler::invert(const Tensor& x0, const EpsFn& eps, int t_end, DdimTrajectory* trace) const {
  const int end = index_of(t_end < 0 ? timesteps_.back() : t_end);
  Tensor x = x0;
  if (trace) {
    trace->direction = DdimTrajectory::Direction::Invert;
    trace->timesteps = {0};
    trace->latents = {x};
  }
  for (int i = 0; i < end; ++i) {
    const int t = timesteps_[static_cast<std::size_t>(i)], t_next = timesteps_[static_cast<std::size_t>(i + 1)];
    x = invert_step(schedule_, x, t, t_next, eps(x, t_next));
    if (!x.all_finite()) fail(ErrorKind::Numerical, "non-finite latent at timestep " + std::to_string(t_next));
    if (trace) {
      trace->timesteps.push_back(t_next);
      trace->latents.push_back(x);
    }
  }
  return x;
}

}  // namespace tristyle
