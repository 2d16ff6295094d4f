#pragma once

#include <climits>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tristyle/attention_hook.hpp"
#include "tristyle/denoiser.hpp"

namespace tristyle {

struct QkvEntry {
  Tensor q, k, v;  // [N, tokens, width]; empty when not captured
};

// Captured self-attention tensors of one pass, keyed by (layer, timestep).
class AttentionCache {
 public:
  using Key = std::pair<std::string, int>;

  void store(const std::string& layer, int timestep, QkvEntry entry);
  const QkvEntry* find(const std::string& layer, int timestep) const;
  // Raises a state error naming the missing pair.
  const QkvEntry& at(const std::string& layer, int timestep) const;
  std::size_t size() const { return entries_.size(); }
  std::vector<Key> keys() const;
  void clear() { entries_.clear(); }

 private:
  std::map<Key, QkvEntry> entries_;
};

struct InjectionPolicy {
  std::vector<std::string> target_layers;
  float beta = 0.6f;
  bool swap_kv = true;
  bool fuse_query = true;
  // Inclusive timestep range in which injection is active.
  int t_min = 0;
  int t_max = INT_MAX;

  static InjectionPolicy defaults(const DenoiserConfig& config);
  bool targets(const std::string& layer) const;
  bool active(const std::string& layer, int timestep) const;
  void validate(const DenoiserConfig& config) const;
  nlohmann::json to_json() const;
  static InjectionPolicy from_json(const nlohmann::json& j, const DenoiserConfig& config);
};

// Q_f = beta * Q_i + (1 - beta) * Q_s, elementwise.
Tensor fuse_queries(const Tensor& q_i, const Tensor& q_s, float beta);

// softmax(Q K^T * scale) V per head; inputs [tokens, width] or [N, tokens, width].
Tensor styled_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads, float scale);

// Copies Q/K/V of the listed layers into a cache. Layers outside the list are ignored.
class CaptureHook : public AttentionHook {
 public:
  CaptureHook(AttentionCache& cache, std::vector<std::string> layers, bool keep_q = true, bool keep_kv = true);
  void on_self_attention(const AttentionSite& site, Tensor& q, Tensor& k, Tensor& v) override;

 private:
  AttentionCache& cache_;
  std::set<std::string> layers_;
  bool keep_q_, keep_kv_;
};

// Main-pass hook: fuses the inversion-pass queries and swaps in style-pass keys
// and values at the policy's active sites.
class InjectHook : public AttentionHook {
 public:
  InjectHook(InjectionPolicy policy, const AttentionCache* style, const AttentionCache* inversion);
  void on_self_attention(const AttentionSite& site, Tensor& q, Tensor& k, Tensor& v) override;

 private:
  InjectionPolicy policy_;
  const AttentionCache* style_;
  const AttentionCache* inversion_;
};

struct RoleMap {
  const AttentionCache* style = nullptr;
  const AttentionCache* inversion = nullptr;
};

InjectHook install(const InjectionPolicy& policy, const RoleMap& roles);

// Experimental: per-sample, per-channel statistics transfer
// sigma(style) * (content - mu(content)) / sigma(content) + mu(style) on [N, C, H, W].
Tensor adain(const Tensor& content, const Tensor& style, float eps = 1e-5f);

}  // namespace tristyle
