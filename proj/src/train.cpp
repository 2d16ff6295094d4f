#include "tristyle/train.hpp"

#include <algorithm>
#include <cmath>

#include "tristyle/errors.hpp"
#include "tristyle/rng.hpp"

namespace tristyle {

nlohmann::json OptimizerConfig::to_json() const {
  return {{"lr", lr},       {"batch", batch},           {"beta1", beta1},
          {"beta2", beta2}, {"eps", eps},               {"grad_clip", grad_clip},
          {"seed", seed},   {"cond_dropout", cond_dropout}};
}

OptimizerConfig OptimizerConfig::from_json(const nlohmann::json& j) {
  OptimizerConfig c;
  c.lr = j.value("lr", c.lr);
  c.batch = j.value("batch", c.batch);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.cond_dropout = j.value("cond_dropout", c.cond_dropout);
  c.seed = j.value("seed", c.seed);
  return c;
}

Adam::Adam(nn::ParamList params, const OptimizerConfig& config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.var.shape());
    v_.emplace_back(p.var.shape());
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

void Adam::step() {
  ++t_;
  double norm2 = 0.0;
  for (const auto& p : params_)
    for (float g : p.var.grad().values()) norm2 += static_cast<double>(g) * g;
  const double norm = std::sqrt(norm2);
  const float clip = (config_.grad_clip > 0.0f && norm > config_.grad_clip)
                         ? static_cast<float>(config_.grad_clip / norm)
                         : 1.0f;
  const float bc1 = 1.0f - std::pow(config_.beta1, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(config_.beta2, static_cast<float>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor& g = params_[i].var.grad();
    if (g.empty()) continue;
    Tensor& w = params_[i].var.mutable_value();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const float gj = g[j] * clip;
      m_[i][j] = config_.beta1 * m_[i][j] + (1.0f - config_.beta1) * gj;
      v_[i][j] = config_.beta2 * v_[i][j] + (1.0f - config_.beta2) * gj * gj;
      w[j] -= config_.lr * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + config_.eps);
    }
  }
}

double TrainTrace::smoothed_initial(int window) const {
  if (losses.empty()) return 0.0;
  const auto n = std::min<std::size_t>(losses.size(), static_cast<std::size_t>(window));
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += losses[i];
  return s / static_cast<double>(n);
}

double TrainTrace::smoothed_final(int window) const {
  if (losses.empty()) return 0.0;
  const auto n = std::min<std::size_t>(losses.size(), static_cast<std::size_t>(window));
  double s = 0.0;
  for (std::size_t i = losses.size() - n; i < losses.size(); ++i) s += losses[i];
  return s / static_cast<double>(n);
}

nlohmann::json TrainTrace::to_json() const {
  return {{"losses", losses}, {"smoothed_initial", smoothed_initial()}, {"smoothed_final", smoothed_final()}};
}

namespace {

Tensor gather(const Tensor& data, const std::vector<int>& idx) {
  std::vector<Tensor> parts;
  parts.reserve(idx.size());
  for (int i : idx) parts.push_back(data.slice_batch(i, i + 1));
  return concat_batch(parts);
}

}  // namespace

TrainTrace train_epsilon(const Denoiser& model, const LatentDataset& data, const NoiseSchedule& schedule, int steps,
                         const OptimizerConfig& config, const nn::ParamList* trainable, const LoraAdapter* lora) {
  if (data.size() == 0) fail(ErrorKind::InvalidInput, "training dataset is empty");
  require(static_cast<int>(data.captions.size()) == data.size(), "one caption per latent is required");
  require(steps >= 0 && config.batch >= 1, "invalid training configuration");
  TrainTrace trace;
  if (steps == 0) return trace;

  const nn::ParamList params = trainable ? *trainable : model.params();
  // Everything outside `params` is frozen for the duration of the run.
  const nn::ParamList all = model.params();
  nn::set_trainable(all, false);
  if (lora) nn::set_trainable(lora->params(), false);
  nn::set_trainable(params, true);

  std::vector<std::vector<int>> caption_ids;
  for (const auto& c : data.captions) caption_ids.push_back(Vocabulary::standard().encode(c));

  Adam opt(params, config);
  Rng rng(config.seed, "train_epsilon");
  for (int step = 0; step < steps; ++step) {
    std::vector<int> idx(static_cast<std::size_t>(config.batch));
    std::vector<int> ts(idx.size());
    std::vector<std::vector<int>> ids(idx.size());
    for (std::size_t b = 0; b < idx.size(); ++b) {
      idx[b] = rng.uniform_int(0, data.size() - 1);
      ts[b] = rng.uniform_int(1, schedule.steps());
      ids[b] = rng.uniform() < config.cond_dropout ? std::vector<int>{} : caption_ids[static_cast<std::size_t>(idx[b])];
    }
    const Tensor x0 = gather(data.latents, idx);
    const Tensor noise = rng.normal_tensor(x0.shape());
    Tensor xt(x0.shape());
    const std::size_t per = x0.size() / idx.size();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const double ab = schedule.alpha_bar(ts[b]);
      const float a = static_cast<float>(std::sqrt(ab)), s = static_cast<float>(std::sqrt(1.0 - ab));
      for (std::size_t j = b * per; j < (b + 1) * per; ++j) xt[j] = a * x0[j] + s * noise[j];
    }
    opt.zero_grad();
    ag::Var ctx = model.text_encoder().encode_ids(ids);
    ag::Var pred = model.forward(ag::constant(xt), ts, ctx, {}, lora);
    ag::Var loss = ag::mse_loss(pred, ag::constant(noise));
    const float lv = loss.value()[0];
    if (!std::isfinite(lv)) {
      nn::set_trainable(all, true);
      fail(ErrorKind::Numerical, "non-finite training loss at step " + std::to_string(step), {{"step", step}});
    }
    ag::backward(loss);
    opt.step();
    trace.losses.push_back(lv);
  }
  nn::set_trainable(all, true);
  if (lora) nn::set_trainable(lora->params(), true);
  return trace;
}

TrainTrace train_autoencoder(Autoencoder& ae, const Tensor& images, int steps, const OptimizerConfig& config) {
  if (images.empty() || images.dim(0) == 0) fail(ErrorKind::InvalidInput, "autoencoder dataset is empty");
  TrainTrace trace;
  Adam opt(ae.params(), config);
  Rng rng(config.seed, "train_autoencoder");
  const int n = images.dim(0);
  for (int step = 0; step < steps; ++step) {
    std::vector<int> idx(static_cast<std::size_t>(config.batch));
    for (int& i : idx) i = rng.uniform_int(0, n - 1);
    const Tensor batch = gather(images, idx);
    opt.zero_grad();
    ag::Var x = ag::constant(batch);
    ag::Var z = ae.encode_raw(x);
    ag::Var recon = ae.decode_raw(z);
    // A light latent penalty keeps the latent scale bounded.
    ag::Var loss = ag::add(ag::mse_loss(recon, x), ag::scale(ag::mse_loss(z, ag::constant(Tensor(z.shape()))), 1e-4f));
    const float lv = loss.value()[0];
    if (!std::isfinite(lv))
      fail(ErrorKind::Numerical, "non-finite autoencoder loss at step " + std::to_string(step), {{"step", step}});
    ag::backward(loss);
    opt.step();
    trace.losses.push_back(lv);
  }
  ag::NoGradGuard guard;
  double s2 = 0.0;
  std::size_t count = 0;
  for (int b = 0; b < n; b += 32) {
    Tensor z = ae.encode_raw(ag::constant(images.slice_batch(b, std::min(n, b + 32)))).value();
    for (float v : z.values()) s2 += static_cast<double>(v) * v;
    count += z.size();
  }
  const double rms = std::sqrt(s2 / static_cast<double>(std::max<std::size_t>(count, 1)));
  ae.set_latent_scale(rms > 0 ? static_cast<float>(1.0 / rms) : 1.0f);
  return trace;
}

double reconstruction_mae(const Autoencoder& ae, const Tensor& images) {
  const int n = images.dim(0);
  double total = 0.0;
  for (int b = 0; b < n; b += 32) {
    const Tensor part = images.slice_batch(b, std::min(n, b + 32));
    total += mean_abs_diff(ae.decode(ae.encode(part)), part) * part.size();
  }
  return total / static_cast<double>(images.size());
}

}  // namespace tristyle
