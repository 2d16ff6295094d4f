#include "tristyle/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include <Eigen/Core>

#include "tristyle/errors.hpp"

namespace tristyle::ag {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using CStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

thread_local bool g_grad_enabled = true;

Var make_result(Tensor value, std::initializer_list<const Var*> inputs, std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (!g_grad_enabled) return Var(node);
  bool any = false;
  for (const Var* in : inputs) any = any || (in->defined() && in->requires_grad());
  if (!any) return Var(node);
  node->requires_grad = true;
  for (const Var* in : inputs) node->parents.push_back(in->defined() ? in->node() : nullptr);
  node->backward = std::move(bw);
  return Var(node);
}

bool wants(const Node& self, std::size_t i) {
  return i < self.parents.size() && self.parents[i] && self.parents[i]->requires_grad;
}

void check_rank(const Var& v, int rank, const char* op) {
  require(v.value().rank() == rank,
          std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(v.shape()));
}

// Output columns [lo, hi) read in-bounds input for kernel offset kj.
inline void valid_range(int wo, int w, int stride, int pad, int kj, int& lo, int& hi) {
  lo = 0;
  while (lo < wo && lo * stride - pad + kj < 0) ++lo;
  hi = wo;
  while (hi > lo && (hi - 1) * stride - pad + kj >= w) --hi;
}

void im2col(const float* x, int ci, int h, int w, int k, int stride, int pad, int ho, int wo, float* cols) {
  for (int c = 0; c < ci; ++c) {
    const float* plane = x + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        float* row = cols + (static_cast<std::size_t>((c * k + ki) * k + kj)) * ho * wo;
        int lo, hi;
        valid_range(wo, w, stride, pad, kj, lo, hi);
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * stride - pad + ki;
          float* out = row + oh * wo;
          if (ih < 0 || ih >= h) {
            std::fill(out, out + wo, 0.0f);
            continue;
          }
          std::fill(out, out + lo, 0.0f);
          std::fill(out + hi, out + wo, 0.0f);
          const float* src = plane + ih * w - pad + kj;
          if (stride == 1) {
            std::copy(src + lo, src + hi, out + lo);
          } else {
            for (int ow = lo; ow < hi; ++ow) out[ow] = src[ow * stride];
          }
        }
      }
    }
  }
}

void col2im(const float* cols, int ci, int h, int w, int k, int stride, int pad, int ho, int wo, float* dx) {
  for (int c = 0; c < ci; ++c) {
    float* plane = dx + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const float* row = cols + (static_cast<std::size_t>((c * k + ki) * k + kj)) * ho * wo;
        int lo, hi;
        valid_range(wo, w, stride, pad, kj, lo, hi);
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= h) continue;
          float* dst = plane + ih * w - pad + kj;
          const float* in = row + oh * wo;
          if (stride == 1) {
            for (int ow = lo; ow < hi; ++ow) dst[ow] += in[ow];
          } else {
            for (int ow = lo; ow < hi; ++ow) dst[ow * stride] += in[ow];
          }
        }
      }
    }
  }
}

}  // namespace

void Node::accumulate(const Tensor& g) {
  if (grad.empty()) {
    grad = g;
    return;
  }
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
}

float* Node::grad_data() {
  if (grad.empty()) grad = Tensor(value.shape());
  return grad.data();
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(node);
}

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(node);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Var& loss) {
  require(loss.value().size() == 1, "backward expects a scalar loss");
  if (!loss.requires_grad()) return;
  // Holding shared_ptrs keeps every node alive while parents links are released.
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<std::shared_ptr<Node>, bool>> stack{{loss.node(), false}};
  while (!stack.empty()) {
    auto [node, expanded] = stack.back();
    stack.pop_back();
    if (expanded) {
      order.push_back(node);
      continue;
    }
    if (!seen.insert(node.get()).second) continue;
    stack.push_back({node, true});
    for (const auto& p : node->parents)
      if (p && p->requires_grad && !seen.count(p.get())) stack.push_back({p, false});
  }
  loss.node()->grad = Tensor(loss.shape(), 1.0f);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = it->get();
    if (node->backward && !node->grad.empty()) {
      node->backward(*node);
      node->backward = nullptr;
      node->parents.clear();
    }
  }
}

Var add(const Var& a, const Var& b) {
  require(same_shape(a.value(), b.value()), "add: shape mismatch " + shape_string(a.shape()) + " vs " +
                                                shape_string(b.shape()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result(std::move(out), {&a, &b}, [](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require(same_shape(a.value(), b.value()), "sub: shape mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result(std::move(out), {&a, &b}, [](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) {
      Tensor g = self.grad;
      for (float& v : g.values()) v = -v;
      self.parents[1]->accumulate(g);
    }
  });
}

Var scale(const Var& a, float s) {
  Tensor out = a.value();
  for (float& v : out.values()) v *= s;
  return make_result(std::move(out), {&a}, [s](Node& self) {
    Tensor g = self.grad;
    for (float& v : g.values()) v *= s;
    self.parents[0]->accumulate(g);
  });
}

Var silu(const Var& x) {
  Tensor out(x.shape());
  using Arr = Eigen::Map<Eigen::ArrayXf>;
  using CArr = Eigen::Map<const Eigen::ArrayXf>;
  const auto count = static_cast<Eigen::Index>(x.value().size());
  CArr xv(x.value().data(), count);
  Arr(out.data(), count) = xv / (1.0f + (-xv).exp());
  return make_result(std::move(out), {&x}, [count](Node& self) {
    CArr xv(self.parents[0]->value.data(), count);
    CArr gy(self.grad.data(), count);
    Arr dx(self.parents[0]->grad_data(), count);
    const Eigen::ArrayXf sig = 1.0f / (1.0f + (-xv).exp());
    dx += gy * (sig + xv * sig * (1.0f - sig));
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  check_rank(weight, 2, "linear");
  const int out_f = weight.dim(0);
  const int in_f = weight.dim(1);
  require(x.value().rank() >= 1 && x.dim(-1) == in_f,
          "linear: input " + shape_string(x.shape()) + " incompatible with weight " + shape_string(weight.shape()));
  const int rows = static_cast<int>(x.value().size() / in_f);
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  Tensor out(out_shape);
  MatMap y(out.data(), rows, out_f);
  y.noalias() = CMatMap(x.value().data(), rows, in_f) * CMatMap(weight.value().data(), out_f, in_f).transpose();
  if (bias.defined()) y.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bias.value().data(), out_f);
  return make_result(std::move(out), {&x, &weight, &bias}, [rows, in_f, out_f](Node& self) {
    CMatMap dy(self.grad.data(), rows, out_f);
    if (wants(self, 0)) {
      MatMap dx(self.parents[0]->grad_data(), rows, in_f);
      dx.noalias() += dy * CMatMap(self.parents[1]->value.data(), out_f, in_f);
    }
    if (wants(self, 1)) {
      MatMap dw(self.parents[1]->grad_data(), out_f, in_f);
      dw.noalias() += dy.transpose() * CMatMap(self.parents[0]->value.data(), rows, in_f);
    }
    if (wants(self, 2)) {
      Eigen::Map<Eigen::RowVectorXf> db(self.parents[2]->grad_data(), out_f);
      db += dy.colwise().sum();
    }
  });
}

Var add_channel_bias(const Var& x, const Var& v) {
  check_rank(x, 4, "add_channel_bias");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  require(v.shape() == Shape{n, c}, "add_channel_bias: offset shape " + shape_string(v.shape()));
  Tensor out = x.value();
  for (int i = 0; i < n * c; ++i)
    for (int p = 0; p < hw; ++p) out[static_cast<std::size_t>(i) * hw + p] += v.value()[i];
  return make_result(std::move(out), {&x, &v}, [n, c, hw](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) {
      float* dv = self.parents[1]->grad_data();
      for (int i = 0; i < n * c; ++i) {
        float s = 0.0f;
        for (int p = 0; p < hw; ++p) s += self.grad[static_cast<std::size_t>(i) * hw + p];
        dv[i] += s;
      }
    }
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  check_rank(x, 4, "conv2d");
  check_rank(weight, 4, "conv2d weight");
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int co = weight.dim(0), k = weight.dim(2);
  require(weight.dim(1) == ci && weight.dim(3) == k,
          "conv2d: weight " + shape_string(weight.shape()) + " incompatible with input " + shape_string(x.shape()));
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (w + 2 * pad - k) / stride + 1;
  require(ho > 0 && wo > 0, "conv2d: output would be empty");
  const int kk = ci * k * k;
  const int hwo = ho * wo;
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);
  Tensor out({n, co, ho, wo});
  std::vector<float> cols(pointwise ? 0 : static_cast<std::size_t>(kk) * hwo);
  CMatMap wm(weight.value().data(), co, kk);
  for (int b = 0; b < n; ++b) {
    const float* xb = x.value().data() + static_cast<std::size_t>(b) * ci * h * w;
    const float* colp = xb;
    if (!pointwise) {
      im2col(xb, ci, h, w, k, stride, pad, ho, wo, cols.data());
      colp = cols.data();
    }
    MatMap yb(out.data() + static_cast<std::size_t>(b) * co * hwo, co, hwo);
    yb.noalias() = wm * CMatMap(colp, kk, hwo);
    if (bias.defined()) yb.colwise() += Eigen::Map<const Eigen::VectorXf>(bias.value().data(), co);
  }
  return make_result(std::move(out), {&x, &weight, &bias},
                     [n, ci, h, w, co, k, stride, pad, ho, wo, kk, hwo, pointwise](Node& self) {
                       const Tensor& xv = self.parents[0]->value;
                       CMatMap wm(self.parents[1]->value.data(), co, kk);
                       std::vector<float> cols(pointwise ? 0 : static_cast<std::size_t>(kk) * hwo);
                       std::vector<float> dcols(static_cast<std::size_t>(kk) * hwo);
                       for (int b = 0; b < n; ++b) {
                         CMatMap dy(self.grad.data() + static_cast<std::size_t>(b) * co * hwo, co, hwo);
                         const float* xb = xv.data() + static_cast<std::size_t>(b) * ci * h * w;
                         if (wants(self, 1)) {
                           const float* colp = xb;
                           if (!pointwise) {
                             im2col(xb, ci, h, w, k, stride, pad, ho, wo, cols.data());
                             colp = cols.data();
                           }
                           MatMap dw(self.parents[1]->grad_data(), co, kk);
                           dw.noalias() += dy * CMatMap(colp, kk, hwo).transpose();
                         }
                         if (wants(self, 2)) {
                           Eigen::Map<Eigen::VectorXf> db(self.parents[2]->grad_data(), co);
                           db += dy.rowwise().sum();
                         }
                         if (wants(self, 0)) {
                           float* dxb = self.parents[0]->grad_data() + static_cast<std::size_t>(b) * ci * h * w;
                           if (pointwise) {
                             MatMap dx(dxb, kk, hwo);
                             dx.noalias() += wm.transpose() * dy;
                           } else {
                             MatMap dc(dcols.data(), kk, hwo);
                             dc.noalias() = wm.transpose() * dy;
                             col2im(dcols.data(), ci, h, w, k, stride, pad, ho, wo, dxb);
                           }
                         }
                       }
                     });
}

Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, float eps) {
  check_rank(x, 4, "group_norm");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  require(groups > 0 && c % groups == 0, "group_norm: channels not divisible by groups");
  const int cg = c / groups;
  const auto m = static_cast<Eigen::Index>(cg) * hw;
  using Arr = Eigen::Map<Eigen::ArrayXf>;
  using CArr = Eigen::Map<const Eigen::ArrayXf>;
  Tensor xhat(x.shape());
  std::vector<float> rstd(static_cast<std::size_t>(n) * groups);
  Tensor out(x.shape());
  for (int b = 0; b < n; ++b) {
    for (int g = 0; g < groups; ++g) {
      const std::size_t off = (static_cast<std::size_t>(b) * c + g * cg) * hw;
      CArr xs(x.value().data() + off, m);
      const float mu = xs.mean();
      Arr xh(xhat.data() + off, m);
      xh = xs - mu;
      const float r = 1.0f / std::sqrt(xh.square().mean() + eps);
      xh *= r;
      rstd[static_cast<std::size_t>(b) * groups + g] = r;
      for (int ch = g * cg; ch < (g + 1) * cg; ++ch) {
        const std::size_t co = (static_cast<std::size_t>(b) * c + ch) * hw;
        Arr(out.data() + co, hw) = CArr(xhat.data() + co, hw) * gamma.value()[ch] + beta.value()[ch];
      }
    }
  }
  return make_result(std::move(out), {&x, &gamma, &beta},
                     [n, c, hw, groups, cg, m, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
                       const Tensor& gam = self.parents[1]->value;
                       float* dgam = wants(self, 1) ? self.parents[1]->grad_data() : nullptr;
                       float* dbet = wants(self, 2) ? self.parents[2]->grad_data() : nullptr;
                       float* dx = wants(self, 0) ? self.parents[0]->grad_data() : nullptr;
                       Eigen::ArrayXf d(m);
                       for (int b = 0; b < n; ++b) {
                         for (int g = 0; g < groups; ++g) {
                           const std::size_t off = (static_cast<std::size_t>(b) * c + g * cg) * hw;
                           CArr xh(xhat.data() + off, m);
                           for (int k = 0; k < cg; ++k) {
                             const int ch = g * cg + k;
                             CArr dy(self.grad.data() + off + static_cast<std::size_t>(k) * hw, hw);
                             if (dgam) dgam[ch] += (dy * xh.segment(static_cast<Eigen::Index>(k) * hw, hw)).sum();
                             if (dbet) dbet[ch] += dy.sum();
                             d.segment(static_cast<Eigen::Index>(k) * hw, hw) = dy * gam[ch];
                           }
                           if (!dx) continue;
                           const float r = rstd[static_cast<std::size_t>(b) * groups + g];
                           const float mean_d = d.mean();
                           const float mean_dx = (d * xh).mean();
                           Arr(dx + off, m) += r * (d - mean_d - xh * mean_dx);
                         }
                       }
                     });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, float eps) {
  const int d = x.dim(-1);
  require(gamma.value().size() == static_cast<std::size_t>(d), "layer_norm: gamma size mismatch");
  const auto rows = static_cast<Eigen::Index>(x.value().size() / d);
  using Mat = Eigen::Map<Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using CMat = Eigen::Map<const Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using CRow = Eigen::Map<const Eigen::Array<float, 1, Eigen::Dynamic>>;
  Tensor xhat(x.shape());
  Tensor out(x.shape());
  CMat xs(x.value().data(), rows, d);
  Mat xh(xhat.data(), rows, d);
  const Eigen::ArrayXf mu = xs.rowwise().mean();
  xh = xs.colwise() - mu;
  Eigen::ArrayXf rstd = 1.0f / ((xh.square().rowwise().mean()) + eps).sqrt();
  xh.colwise() *= rstd;
  Mat(out.data(), rows, d) =
      (xh.rowwise() * CRow(gamma.value().data(), d)).rowwise() + CRow(beta.value().data(), d);
  return make_result(std::move(out), {&x, &gamma, &beta},
                     [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
                       using RowArr = Eigen::Map<Eigen::Array<float, 1, Eigen::Dynamic>>;
                       CMat gy(self.grad.data(), rows, d);
                       CMat xh(xhat.data(), rows, d);
                       CRow gam(self.parents[1]->value.data(), d);
                       if (wants(self, 1)) RowArr(self.parents[1]->grad_data(), d) += (gy * xh).colwise().sum();
                       if (wants(self, 2)) RowArr(self.parents[2]->grad_data(), d) += gy.colwise().sum();
                       if (!wants(self, 0)) return;
                       const Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> g = gy.rowwise() * gam;
                       const Eigen::ArrayXf mean_g = g.rowwise().mean();
                       const Eigen::ArrayXf mean_gx = (g * xh).rowwise().mean();
                       Mat dx(self.parents[0]->grad_data(), rows, d);
                       dx += ((g.colwise() - mean_g) - xh.colwise() * mean_gx).colwise() * rstd;
                     });
}

Var upsample2x(const Var& x) {
  check_rank(x, 4, "upsample2x");
  const int nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out({x.dim(0), x.dim(1), 2 * h, 2 * w});
  for (int p = 0; p < nc; ++p)
    for (int i = 0; i < 2 * h; ++i)
      for (int j = 0; j < 2 * w; ++j)
        out[(static_cast<std::size_t>(p) * 2 * h + i) * 2 * w + j] =
            x.value()[(static_cast<std::size_t>(p) * h + i / 2) * w + j / 2];
  return make_result(std::move(out), {&x}, [nc, h, w](Node& self) {
    float* dx = self.parents[0]->grad_data();
    for (int p = 0; p < nc; ++p)
      for (int i = 0; i < 2 * h; ++i)
        for (int j = 0; j < 2 * w; ++j)
          dx[(static_cast<std::size_t>(p) * h + i / 2) * w + j / 2] +=
              self.grad[(static_cast<std::size_t>(p) * 2 * h + i) * 2 * w + j];
  });
}

Var concat_channels(const Var& a, const Var& b) {
  check_rank(a, 4, "concat_channels");
  check_rank(b, 4, "concat_channels");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3), "concat_channels: shape mismatch");
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::size_t hw = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  Tensor out({n, ca + cb, a.dim(2), a.dim(3)});
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.value().data() + i * ca * hw, ca * hw, out.data() + i * (ca + cb) * hw);
    std::copy_n(b.value().data() + i * cb * hw, cb * hw, out.data() + (i * (ca + cb) + ca) * hw);
  }
  return make_result(std::move(out), {&a, &b}, [n, ca, cb, hw](Node& self) {
    for (int i = 0; i < n; ++i) {
      const float* g = self.grad.data() + i * (ca + cb) * hw;
      if (wants(self, 0)) {
        float* da = self.parents[0]->grad_data() + i * ca * hw;
        for (std::size_t j = 0; j < ca * hw; ++j) da[j] += g[j];
      }
      if (wants(self, 1)) {
        float* db = self.parents[1]->grad_data() + i * cb * hw;
        for (std::size_t j = 0; j < cb * hw; ++j) db[j] += g[ca * hw + j];
      }
    }
  });
}

namespace {

// Index map shared by space_to_depth and its inverse: element (n, c, h, w)
// of the fine tensor lands at (n, c*b*b + (h%b)*b + w%b, h/b, w/b).
template <typename F>
void for_each_block_index(int n, int c, int h, int w, int blk, F&& f) {
  const int hc = h / blk, wc = w / blk, cc = c * blk * blk;
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          const std::size_t fine = ((static_cast<std::size_t>(b) * c + ch) * h + i) * w + j;
          const int oc = ch * blk * blk + (i % blk) * blk + j % blk;
          const std::size_t coarse = ((static_cast<std::size_t>(b) * cc + oc) * hc + i / blk) * wc + j / blk;
          f(fine, coarse);
        }
}

}  // namespace

Var space_to_depth(const Var& x, int block) {
  check_rank(x, 4, "space_to_depth");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(h % block == 0 && w % block == 0,
          "spatial size " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by " + std::to_string(block));
  Tensor out({n, c * block * block, h / block, w / block});
  for_each_block_index(n, c, h, w, block, [&](std::size_t f, std::size_t cs) { out[cs] = x.value()[f]; });
  return make_result(std::move(out), {&x}, [n, c, h, w, block](Node& self) {
    float* dx = self.parents[0]->grad_data();
    for_each_block_index(n, c, h, w, block, [&](std::size_t f, std::size_t cs) { dx[f] += self.grad[cs]; });
  });
}

Var depth_to_space(const Var& x, int block) {
  check_rank(x, 4, "depth_to_space");
  const int bb = block * block;
  require(x.dim(1) % bb == 0, "depth_to_space: channels not divisible by block^2");
  const int n = x.dim(0), c = x.dim(1) / bb, h = x.dim(2) * block, w = x.dim(3) * block;
  Tensor out({n, c, h, w});
  for_each_block_index(n, c, h, w, block, [&](std::size_t f, std::size_t cs) { out[f] = x.value()[cs]; });
  return make_result(std::move(out), {&x}, [n, c, h, w, block](Node& self) {
    float* dx = self.parents[0]->grad_data();
    for_each_block_index(n, c, h, w, block, [&](std::size_t f, std::size_t cs) { dx[cs] += self.grad[f]; });
  });
}

Var to_tokens(const Var& x) {
  check_rank(x, 4, "to_tokens");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out({n, hw, c});
  for (int b = 0; b < n; ++b) {
    MatMap(out.data() + static_cast<std::size_t>(b) * hw * c, hw, c) =
        CMatMap(x.value().data() + static_cast<std::size_t>(b) * c * hw, c, hw).transpose();
  }
  return make_result(std::move(out), {&x}, [n, c, hw](Node& self) {
    float* dx = self.parents[0]->grad_data();
    for (int b = 0; b < n; ++b)
      MatMap(dx + static_cast<std::size_t>(b) * c * hw, c, hw) +=
          CMatMap(self.grad.data() + static_cast<std::size_t>(b) * hw * c, hw, c).transpose();
  });
}

Var from_tokens(const Var& x, int height, int width) {
  check_rank(x, 3, "from_tokens");
  const int n = x.dim(0), hw = x.dim(1), c = x.dim(2);
  require(hw == height * width, "from_tokens: token count does not match spatial size");
  Tensor out({n, c, height, width});
  for (int b = 0; b < n; ++b)
    MatMap(out.data() + static_cast<std::size_t>(b) * c * hw, c, hw) =
        CMatMap(x.value().data() + static_cast<std::size_t>(b) * hw * c, hw, c).transpose();
  return make_result(std::move(out), {&x}, [n, c, hw](Node& self) {
    float* dx = self.parents[0]->grad_data();
    for (int b = 0; b < n; ++b)
      MatMap(dx + static_cast<std::size_t>(b) * hw * c, hw, c) +=
          CMatMap(self.grad.data() + static_cast<std::size_t>(b) * c * hw, c, hw).transpose();
  });
}

Var attention(const Var& q, const Var& k, const Var& v, int heads, float scale) {
  check_rank(q, 3, "attention q");
  check_rank(k, 3, "attention k");
  check_rank(v, 3, "attention v");
  const int n = q.dim(0), tq = q.dim(1), d = q.dim(2), tk = k.dim(1);
  require(k.dim(0) == n && v.dim(0) == n, "attention: batch mismatch");
  require(k.dim(2) == d && v.dim(2) == d, "attention: feature width mismatch");
  require(v.dim(1) == tk, "attention: key/value token-count mismatch (" + std::to_string(tk) + " vs " +
                              std::to_string(v.dim(1)) + ")");
  require(heads > 0 && d % heads == 0, "attention: width not divisible by heads");
  const int hd = d / heads;
  Tensor out({n, tq, d});
  // Softmax probabilities are kept for the backward pass: [n, heads, tq, tk].
  Tensor probs({n, heads, tq, tk});
  for (int b = 0; b < n; ++b) {
    for (int h = 0; h < heads; ++h) {
      CStridedMap qh(q.value().data() + static_cast<std::size_t>(b) * tq * d + h * hd, tq, hd, Eigen::OuterStride<>(d));
      CStridedMap kh(k.value().data() + static_cast<std::size_t>(b) * tk * d + h * hd, tk, hd, Eigen::OuterStride<>(d));
      CStridedMap vh(v.value().data() + static_cast<std::size_t>(b) * tk * d + h * hd, tk, hd, Eigen::OuterStride<>(d));
      MatMap p(probs.data() + (static_cast<std::size_t>(b) * heads + h) * tq * tk, tq, tk);
      p.noalias() = (qh * kh.transpose()) * scale;
      for (int i = 0; i < tq; ++i) {
        auto row = p.row(i);
        const float mx = row.maxCoeff();
        row = (row.array() - mx).exp();
        row /= row.sum();
      }
      StridedMap oh(out.data() + static_cast<std::size_t>(b) * tq * d + h * hd, tq, hd, Eigen::OuterStride<>(d));
      oh.noalias() = p * vh;
    }
  }
  return make_result(std::move(out), {&q, &k, &v},
                     [n, tq, tk, d, heads, hd, scale, probs = std::move(probs)](Node& self) {
                       const Tensor& qv = self.parents[0]->value;
                       const Tensor& kv = self.parents[1]->value;
                       const Tensor& vv = self.parents[2]->value;
                       float* dq = wants(self, 0) ? self.parents[0]->grad_data() : nullptr;
                       float* dk = wants(self, 1) ? self.parents[1]->grad_data() : nullptr;
                       float* dv = wants(self, 2) ? self.parents[2]->grad_data() : nullptr;
                       RowMat dp(tq, tk);
                       const Eigen::OuterStride<> st(d);
                       for (int b = 0; b < n; ++b) {
                         for (int h = 0; h < heads; ++h) {
                           const std::size_t qo = static_cast<std::size_t>(b) * tq * d + h * hd;
                           const std::size_t ko = static_cast<std::size_t>(b) * tk * d + h * hd;
                           CMatMap p(probs.data() + (static_cast<std::size_t>(b) * heads + h) * tq * tk, tq, tk);
                           CStridedMap go(self.grad.data() + qo, tq, hd, st);
                           CStridedMap vh(vv.data() + ko, tk, hd, st);
                           if (dv) StridedMap(dv + ko, tk, hd, st).noalias() += p.transpose() * go;
                           if (!dq && !dk) continue;
                           dp.noalias() = go * vh.transpose();
                           for (int i = 0; i < tq; ++i) {
                             const float dot = p.row(i).dot(dp.row(i));
                             dp.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix() * scale;
                           }
                           if (dq) StridedMap(dq + qo, tq, hd, st).noalias() += dp * CStridedMap(kv.data() + ko, tk, hd, st);
                           if (dk) StridedMap(dk + ko, tk, hd, st).noalias() += dp.transpose() * CStridedMap(qv.data() + qo, tq, hd, st);
                         }
                       }
                     });
}

Var embedding(const Var& table, std::span<const int> ids, int batch, int length) {
  check_rank(table, 2, "embedding");
  require(ids.size() == static_cast<std::size_t>(batch) * length, "embedding: id count mismatch");
  const int vocab = table.dim(0), d = table.dim(1);
  Tensor out({batch, length, d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < vocab, "embedding: token id out of range");
    std::copy_n(table.value().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return make_result(std::move(out), {&table}, [d, idv = std::move(idv)](Node& self) {
    float* dt = self.parents[0]->grad_data();
    for (std::size_t i = 0; i < idv.size(); ++i)
      for (int j = 0; j < d; ++j) dt[static_cast<std::size_t>(idv[i]) * d + j] += self.grad[i * d + j];
  });
}

Var add_positional(const Var& x, const Var& pos) {
  check_rank(x, 3, "add_positional");
  const int n = x.dim(0), l = x.dim(1), d = x.dim(2);
  require(pos.dim(0) >= l && pos.dim(1) == d, "add_positional: table too small");
  Tensor out = x.value();
  for (int b = 0; b < n; ++b)
    for (int i = 0; i < l * d; ++i) out[static_cast<std::size_t>(b) * l * d + i] += pos.value()[i];
  return make_result(std::move(out), {&x, &pos}, [n, l, d](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) {
      float* dp = self.parents[1]->grad_data();
      for (int b = 0; b < n; ++b)
        for (int i = 0; i < l * d; ++i) dp[i] += self.grad[static_cast<std::size_t>(b) * l * d + i];
    }
  });
}

Var mse_loss(const Var& a, const Var& b) {
  require(same_shape(a.value(), b.value()), "mse_loss: shape mismatch");
  const std::size_t count = a.value().size();
  double s = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double diff = static_cast<double>(a.value()[i]) - b.value()[i];
    s += diff * diff;
  }
  Tensor out({1}, static_cast<float>(s / static_cast<double>(count)));
  return make_result(std::move(out), {&a, &b}, [count](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    const float g0 = self.grad[0] * 2.0f / static_cast<float>(count);
    Tensor g(av.shape());
    for (std::size_t i = 0; i < count; ++i) g[i] = g0 * (av[i] - bv[i]);
    if (wants(self, 0)) self.parents[0]->accumulate(g);
    if (wants(self, 1)) {
      for (float& x : g.values()) x = -x;
      self.parents[1]->accumulate(g);
    }
  });
}

}  // namespace tristyle::ag
