#include "tristyle/nn.hpp"

#include <cmath>
#include <cstring>

namespace tristyle::nn {

namespace {

Tensor random_weights(Shape shape, int fan_in, float gain, Rng& rng) {
  const float std = gain / std::sqrt(static_cast<float>(fan_in));
  return rng.normal_tensor(std::move(shape), std);
}

}  // namespace

Linear::Linear(int in, int out, bool with_bias, Rng& rng, float gain)
    : weight(ag::parameter(random_weights({out, in}, in, gain, rng))) {
  if (with_bias) bias = ag::parameter(Tensor({out}));
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

Conv2d::Conv2d(int in, int out, int kernel, int stride_, int pad_, Rng& rng, float gain)
    : weight(ag::parameter(random_weights({out, in, kernel, kernel}, in * kernel * kernel, gain, rng))),
      bias(ag::parameter(Tensor({out}))),
      stride(stride_),
      pad(pad_) {}

void Conv2d::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

GroupNorm::GroupNorm(int channels, int groups_)
    : gamma(ag::parameter(Tensor({channels}, 1.0f))), beta(ag::parameter(Tensor({channels}))), groups(groups_) {}

void GroupNorm::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

LayerNorm::LayerNorm(int width) : gamma(ag::parameter(Tensor({width}, 1.0f))), beta(ag::parameter(Tensor({width}))) {}

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

void set_trainable(const ParamList& params, bool trainable) {
  for (const auto& p : params) {
    ag::Var v = p.var;
    v.set_requires_grad(trainable);
  }
}

std::uint64_t checksum(const ParamList& params) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& p : params) {
    mix(p.name.data(), p.name.size());
    mix(p.var.value().data(), p.var.value().size() * sizeof(float));
  }
  return h;
}

}  // namespace tristyle::nn
