#include "tristyle/lora_adapter.hpp"

#include <cmath>

#include "tristyle/errors.hpp"
#include "tristyle/rng.hpp"

namespace tristyle {

LoraAdapter LoraAdapter::create(const std::vector<LoraTarget>& targets, int rank, float scale, std::uint64_t seed) {
  require(rank >= 1, "LoRA rank must be >= 1");
  LoraAdapter adapter;
  adapter.rank_ = rank;
  adapter.scale_ = scale;
  adapter.manifest_.seed = seed;
  for (const auto& t : targets) {
    Rng rng(seed, "lora/" + t.layer);
    LoraPair pair{ag::parameter(rng.normal_tensor({rank, t.in}, 1.0f / std::sqrt(static_cast<float>(t.in)))),
                  ag::parameter(Tensor({t.out, rank}))};
    adapter.pairs_.emplace(t.layer, std::move(pair));
  }
  return adapter;
}

const LoraPair* LoraAdapter::find(std::string_view layer) const {
  auto it = pairs_.find(layer);
  return it == pairs_.end() ? nullptr : &it->second;
}

std::vector<std::string> LoraAdapter::target_layers() const {
  std::vector<std::string> names;
  for (const auto& [name, pair] : pairs_) names.push_back(name);
  return names;
}

nn::ParamList LoraAdapter::params() const {
  nn::ParamList out;
  for (const auto& [name, pair] : pairs_) {
    out.push_back({name + ".lora_a", pair.a});
    out.push_back({name + ".lora_b", pair.b});
  }
  return out;
}

LoraAdapter LoraAdapter::from_params(const std::vector<std::pair<std::string, Tensor>>& tensors, int rank,
                                     float scale) {
  LoraAdapter adapter;
  adapter.rank_ = rank;
  adapter.scale_ = scale;
  auto strip = [](const std::string& name, std::string_view suffix) -> std::string {
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      return name.substr(0, name.size() - suffix.size());
    return {};
  };
  for (const auto& [name, t] : tensors) {
    if (auto layer = strip(name, ".lora_a"); !layer.empty()) {
      require(t.rank() == 2 && t.dim(0) == rank, "LoRA A tensor " + name + " has wrong shape");
      adapter.pairs_[layer].a = ag::parameter(t);
    } else if (auto layer_b = strip(name, ".lora_b"); !layer_b.empty()) {
      require(t.rank() == 2 && t.dim(1) == rank, "LoRA B tensor " + name + " has wrong shape");
      adapter.pairs_[layer_b].b = ag::parameter(t);
    }
  }
  for (const auto& [name, pair] : adapter.pairs_)
    require(pair.a.defined() && pair.b.defined(), "LoRA layer " + name + " is missing A or B");
  return adapter;
}

LoraAdapter LoraAdapter::clone() const {
  LoraAdapter copy;
  copy.rank_ = rank_;
  copy.scale_ = scale_;
  copy.manifest_ = manifest_;
  for (const auto& [name, pair] : pairs_)
    copy.pairs_.emplace(name, LoraPair{ag::parameter(pair.a.value()), ag::parameter(pair.b.value())});
  return copy;
}

ag::Var LoraAdapter::project(const ag::Var& x, const nn::Linear& base, std::string_view layer) const {
  ag::Var y = base(x);
  const LoraPair* pair = find(layer);
  if (!pair || scale_ == 0.0f) return y;
  ag::Var delta = ag::linear(ag::linear(x, pair->a), pair->b);
  return ag::add(y, ag::scale(delta, scale_));
}

Tensor apply_adapter(const Tensor& weight, const LoraAdapter& adapter, const std::string& layer) {
  require(weight.rank() == 2, "apply_adapter expects a 2-D weight");
  Tensor out = weight;
  const LoraPair* pair = adapter.find(layer);
  if (!pair) return out;
  const Tensor& a = pair->a.value();
  const Tensor& b = pair->b.value();
  const int rows = weight.dim(0), cols = weight.dim(1), r = adapter.rank();
  require(b.dim(0) == rows && a.dim(1) == cols,
          "adapter for " + layer + " has shape B" + shape_string(b.shape()) + " A" + shape_string(a.shape()) +
              ", incompatible with weight " + shape_string(weight.shape()));
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      float s = 0.0f;
      for (int k = 0; k < r; ++k) s += b[static_cast<std::size_t>(i) * r + k] * a[static_cast<std::size_t>(k) * cols + j];
      out[static_cast<std::size_t>(i) * cols + j] += adapter.scale() * s;
    }
  return out;
}

}  // namespace tristyle
