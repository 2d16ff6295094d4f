#include "tristyle/attention_control.hpp"

#include <algorithm>
#include <cmath>

#include "tristyle/errors.hpp"

namespace tristyle {

namespace {

std::string pair_name(const std::string& layer, int timestep) {
  return "(" + layer + ", t=" + std::to_string(timestep) + ")";
}

}  // namespace

void AttentionCache::store(const std::string& layer, int timestep, QkvEntry entry) {
  for (const Tensor* t : {&entry.q, &entry.k, &entry.v})
    if (!t->all_finite()) fail(ErrorKind::Numerical, "non-finite attention tensor at " + pair_name(layer, timestep));
  const auto [it, inserted] = entries_.emplace(Key{layer, timestep}, std::move(entry));
  if (!inserted) fail(ErrorKind::State, "attention cache already holds " + pair_name(layer, timestep));
}

const QkvEntry* AttentionCache::find(const std::string& layer, int timestep) const {
  const auto it = entries_.find(Key{layer, timestep});
  return it == entries_.end() ? nullptr : &it->second;
}

const QkvEntry& AttentionCache::at(const std::string& layer, int timestep) const {
  const QkvEntry* e = find(layer, timestep);
  if (!e)
    fail(ErrorKind::State, "attention cache has no entry for " + pair_name(layer, timestep),
         {{"layer", layer}, {"timestep", timestep}});
  return *e;
}

std::vector<AttentionCache::Key> AttentionCache::keys() const {
  std::vector<Key> out;
  out.reserve(entries_.size());
  for (const auto& [k, _] : entries_) out.push_back(k);
  return out;
}

InjectionPolicy InjectionPolicy::defaults(const DenoiserConfig& config) {
  InjectionPolicy p;
  p.target_layers = config.decoder_attention_layers();
  return p;
}

bool InjectionPolicy::targets(const std::string& layer) const {
  return std::find(target_layers.begin(), target_layers.end(), layer) != target_layers.end();
}

bool InjectionPolicy::active(const std::string& layer, int timestep) const {
  return (swap_kv || fuse_query) && timestep >= t_min && timestep <= t_max && targets(layer);
}

void InjectionPolicy::validate(const DenoiserConfig& config) const {
  if (!(beta >= 0.0f && beta <= 1.0f))
    fail(ErrorKind::InvalidInput, "beta must lie in [0, 1], got " + std::to_string(beta));
  if (t_min > t_max) fail(ErrorKind::InvalidInput, "empty active timestep range");
  const auto decoder = config.decoder_attention_layers();
  for (const auto& l : target_layers)
    if (std::find(decoder.begin(), decoder.end(), l) == decoder.end())
      fail(ErrorKind::InvalidInput, "target layer '" + l + "' is not a decoder self-attention layer",
           {{"decoder_layers", decoder}});
}

nlohmann::json InjectionPolicy::to_json() const {
  return {{"target_layers", target_layers}, {"beta", beta},   {"swap_kv", swap_kv},
          {"fuse_query", fuse_query},       {"t_min", t_min}, {"t_max", t_max}};
}

InjectionPolicy InjectionPolicy::from_json(const nlohmann::json& j, const DenoiserConfig& config) {
  InjectionPolicy p = defaults(config);
  if (j.contains("target_layers")) p.target_layers = j.at("target_layers").get<std::vector<std::string>>();
  p.beta = j.value("beta", p.beta);
  p.swap_kv = j.value("swap_kv", p.swap_kv);
  p.fuse_query = j.value("fuse_query", p.fuse_query);
  p.t_min = j.value("t_min", p.t_min);
  p.t_max = j.value("t_max", p.t_max);
  p.validate(config);
  return p;
}

Tensor fuse_queries(const Tensor& q_i, const Tensor& q_s, float beta) {
  if (q_i.shape() != q_s.shape())
    fail(ErrorKind::InvalidInput,
         "query shapes differ: " + shape_string(q_i.shape()) + " vs " + shape_string(q_s.shape()));
  if (!(beta >= 0.0f && beta <= 1.0f))
    fail(ErrorKind::InvalidInput, "beta must lie in [0, 1], got " + std::to_string(beta));
  if (beta == 0.0f) return q_s;
  if (beta == 1.0f) return q_i;
  Tensor out(q_s.shape());
  const double b = beta, rest = 1.0 - b;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(b * q_i[i] + rest * q_s[i]);
  return out;
}

Tensor styled_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads, float scale) {
  require(q.rank() == k.rank() && k.rank() == v.rank() && (q.rank() == 2 || q.rank() == 3),
          "styled_attention expects [tokens, width] or [N, tokens, width] inputs");
  const bool batched = q.rank() == 3;
  const int tok_axis = batched ? 1 : 0;
  if (k.dim(tok_axis) != v.dim(tok_axis))
    fail(ErrorKind::InvalidInput, "key/value token counts differ: " + std::to_string(k.dim(tok_axis)) + " vs " +
                                      std::to_string(v.dim(tok_axis)));
  require(q.shape().back() == k.shape().back(), "query/key widths differ");
  require(heads >= 1 && q.shape().back() % heads == 0 && v.shape().back() % heads == 0,
          "width not divisible by head count");
  auto lift = [&](const Tensor& t) { return batched ? t : t.reshaped({1, t.dim(0), t.dim(1)}); };
  ag::NoGradGuard guard;
  Tensor out = ag::attention(ag::constant(lift(q)), ag::constant(lift(k)), ag::constant(lift(v)), heads, scale).value();
  return batched ? out : out.reshaped({out.dim(1), out.dim(2)});
}

CaptureHook::CaptureHook(AttentionCache& cache, std::vector<std::string> layers, bool keep_q, bool keep_kv)
    : cache_(cache), layers_(layers.begin(), layers.end()), keep_q_(keep_q), keep_kv_(keep_kv) {}

void CaptureHook::on_self_attention(const AttentionSite& site, Tensor& q, Tensor& k, Tensor& v) {
  if (!layers_.count(site.layer)) return;
  QkvEntry e;
  if (keep_q_) e.q = q;
  if (keep_kv_) {
    e.k = k;
    e.v = v;
  }
  cache_.store(site.layer, site.timestep, std::move(e));
}

InjectHook::InjectHook(InjectionPolicy policy, const AttentionCache* style, const AttentionCache* inversion)
    : policy_(std::move(policy)), style_(style), inversion_(inversion) {
  if (policy_.swap_kv && !style_) fail(ErrorKind::State, "key/value swap requires a style-pass cache");
  if (policy_.fuse_query && !inversion_) fail(ErrorKind::State, "query fusion requires an inversion-pass cache");
}

void InjectHook::on_self_attention(const AttentionSite& site, Tensor& q, Tensor& k, Tensor& v) {
  if (!policy_.active(site.layer, site.timestep)) return;
  if (policy_.fuse_query) {
    const QkvEntry& inv = inversion_->at(site.layer, site.timestep);
    if (inv.q.empty()) fail(ErrorKind::State, "inversion cache lacks queries for " + pair_name(site.layer, site.timestep));
    q = fuse_queries(inv.q, q, policy_.beta);
  }
  if (policy_.swap_kv) {
    const QkvEntry& sty = style_->at(site.layer, site.timestep);
    if (sty.k.empty() || sty.v.empty())
      fail(ErrorKind::State, "style cache lacks keys/values for " + pair_name(site.layer, site.timestep));
    if (sty.k.shape() != k.shape() || sty.v.shape() != v.shape())
      fail(ErrorKind::InvalidInput, "cached keys " + shape_string(sty.k.shape()) + " do not match main pass " +
                                        shape_string(k.shape()) + " at " + pair_name(site.layer, site.timestep));
    k = sty.k;
    v = sty.v;
  }
}

InjectHook install(const InjectionPolicy& policy, const RoleMap& roles) {
  return InjectHook(policy, roles.style, roles.inversion);
}

Tensor adain(const Tensor& content, const Tensor& style, float eps) {
  require(content.rank() == 4 && content.shape() == style.shape(),
          "adain expects equal [N, C, H, W] shapes, got " + shape_string(content.shape()) + " and " +
              shape_string(style.shape()));
  const std::size_t hw = static_cast<std::size_t>(content.dim(2)) * content.dim(3);
  const std::size_t planes = content.size() / hw;
  Tensor out(content.shape());
  auto stats = [&](const Tensor& t, std::size_t p) {
    double m = 0.0, s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) m += t[p * hw + i];
    m /= static_cast<double>(hw);
    for (std::size_t i = 0; i < hw; ++i) s += (t[p * hw + i] - m) * (t[p * hw + i] - m);
    return std::pair<double, double>{m, std::sqrt(s / static_cast<double>(hw) + eps)};
  };
  for (std::size_t p = 0; p < planes; ++p) {
    const auto [mc, sc] = stats(content, p);
    const auto [ms, ss] = stats(style, p);
    for (std::size_t i = 0; i < hw; ++i)
      out[p * hw + i] = static_cast<float>(ss * (content[p * hw + i] - mc) / sc + ms);
  }
  return out;
}

}  // namespace tristyle
