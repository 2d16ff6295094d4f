#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "tristyle/nn.hpp"

namespace tristyle {

// A projection that can carry a low-rank delta: y = x W^T + s (x A^T) B^T.
struct LoraTarget {
  std::string layer;
  int in = 0;
  int out = 0;
};

struct LoraPair {
  ag::Var a;  // [rank, in]
  ag::Var b;  // [out, rank]
};

struct LoraManifest {
  int stage = 0;
  std::string dataset_hash;
  int steps = 0;
  std::uint64_t seed = 0;
};

class LoraAdapter {
 public:
  LoraAdapter() = default;
  // A ~ N(0, 1/in), B = 0, so a fresh adapter contributes exactly nothing.
  static LoraAdapter create(const std::vector<LoraTarget>& targets, int rank, float scale, std::uint64_t seed);

  int rank() const { return rank_; }
  float scale() const { return scale_; }
  void set_scale(float s) { scale_ = s; }
  const LoraPair* find(std::string_view layer) const;
  std::vector<std::string> target_layers() const;
  bool empty() const { return pairs_.empty(); }

  LoraManifest& manifest() { return manifest_; }
  const LoraManifest& manifest() const { return manifest_; }

  nn::ParamList params() const;
  // Rebuilds an adapter from named A/B tensors ("<layer>.lora_a" / ".lora_b").
  static LoraAdapter from_params(const std::vector<std::pair<std::string, Tensor>>& tensors, int rank, float scale);
  LoraAdapter clone() const;

  // Applies the (optional) delta for `layer` on top of the base projection.
  ag::Var project(const ag::Var& x, const nn::Linear& base, std::string_view layer) const;

 private:
  int rank_ = 0;
  float scale_ = 1.0f;
  std::map<std::string, LoraPair, std::less<>> pairs_;
  LoraManifest manifest_;
};

// W_eff = W + s * B * A for the named layer; W itself is left untouched.
Tensor apply_adapter(const Tensor& weight, const LoraAdapter& adapter, const std::string& layer);

// Base projection plus delta when an adapter is present.
inline ag::Var project(const ag::Var& x, const nn::Linear& base, std::string_view layer, const LoraAdapter* lora) {
  return lora ? lora->project(x, base, layer) : base(x);
}

}  // namespace tristyle
