#pragma once

#include <string>
#include <vector>

#include "tristyle/autograd.hpp"
#include "tristyle/rng.hpp"

namespace tristyle::nn {

struct NamedParam {
  std::string name;
  ag::Var var;
};
using ParamList = std::vector<NamedParam>;

struct Linear {
  ag::Var weight;  // [out, in]
  ag::Var bias;    // [out] or undefined

  Linear() = default;
  Linear(int in, int out, bool with_bias, Rng& rng, float gain = 1.0f);
  ag::Var operator()(const ag::Var& x) const { return ag::linear(x, weight, bias); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct Conv2d {
  ag::Var weight;  // [out, in, k, k]
  ag::Var bias;
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(int in, int out, int kernel, int stride, int pad, Rng& rng, float gain = 1.0f);
  ag::Var operator()(const ag::Var& x) const { return ag::conv2d(x, weight, bias, stride, pad); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct GroupNorm {
  ag::Var gamma;
  ag::Var beta;
  int groups = 1;

  GroupNorm() = default;
  GroupNorm(int channels, int groups);
  ag::Var operator()(const ag::Var& x) const { return ag::group_norm(x, groups, gamma, beta); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct LayerNorm {
  ag::Var gamma;
  ag::Var beta;

  LayerNorm() = default;
  explicit LayerNorm(int width);
  ag::Var operator()(const ag::Var& x) const { return ag::layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, ParamList& out) const;
};

// Toggles requires_grad on every parameter in the list.
void set_trainable(const ParamList& params, bool trainable);
// Deterministic checksum over names and payloads, used by freeze checks.
std::uint64_t checksum(const ParamList& params);

}  // namespace tristyle::nn
