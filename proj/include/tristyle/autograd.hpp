#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "tristyle/tensor.hpp"

namespace tristyle::ag {

// Minimal reverse-mode autodiff. A Var owns a graph node; ops record a
// backward closure only when grad mode is on and some input requires grad.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  // Adds g into grad, allocating on first use.
  void accumulate(const Tensor& g);
  float* grad_data();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad = Tensor(); }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int axis) const { return node_->value.dim(axis); }
  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var parameter(Tensor value);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Seeds d(loss)/d(loss) = 1 and propagates to every node that requires grad.
void backward(const Var& loss);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, float s);
Var silu(const Var& x);

// x: [..., in], weight: [out, in], bias: [out] or undefined.
Var linear(const Var& x, const Var& weight, const Var& bias = Var());
// x: [N, C, H, W] plus a per-(n, c) offset v: [N, C].
Var add_channel_bias(const Var& x, const Var& v);
// weight: [Co, Ci, k, k], bias: [Co] or undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, float eps = 1e-5f);
// Normalizes over the last axis.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, float eps = 1e-5f);
Var upsample2x(const Var& x);
Var concat_channels(const Var& a, const Var& b);
Var space_to_depth(const Var& x, int block);
Var depth_to_space(const Var& x, int block);
// [N, C, H, W] <-> [N, H*W, C]
Var to_tokens(const Var& x);
Var from_tokens(const Var& x, int height, int width);
// Multi-head scaled dot-product attention. q: [N, Tq, D], k: [N, Tk, D],
// v: [N, Tk, D]; heads split D evenly. Returns [N, Tq, D].
Var attention(const Var& q, const Var& k, const Var& v, int heads, float scale);
// Gathers rows of table [V, D] for ids laid out as [N, L] -> [N, L, D].
Var embedding(const Var& table, std::span<const int> ids, int batch, int length);
// Broadcast-adds pos [L, D] to x [N, L, D].
Var add_positional(const Var& x, const Var& pos);
Var mse_loss(const Var& a, const Var& b);

}  // namespace tristyle::ag
