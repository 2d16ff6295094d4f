#pragma once

#include <string>
#include <vector>

#include "tristyle/tensor.hpp"

namespace tristyle {

// Where a self-attention call happens: which layer, at which timestep.
struct AttentionSite {
  std::string layer;
  int timestep = 0;
  bool decoder = false;
};

// Observes (and may replace) the Q/K/V of a self-attention layer right before
// the attention product. Tensors are [batch, tokens, width].
class AttentionHook {
 public:
  virtual ~AttentionHook() = default;
  virtual void on_self_attention(const AttentionSite& site, Tensor& q, Tensor& k, Tensor& v) = 0;
};

using HookList = std::vector<AttentionHook*>;

}  // namespace tristyle
