#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "tristyle/rng.hpp"
#include "tristyle/semantic_caption.hpp"
#include "tristyle/tensor.hpp"

namespace tristyle::fixtures {

// Scalar reference: per head, softmax over keys of scale * <q, k>, then the
// weighted sum of values. Accumulates in double.
inline std::vector<double> brute_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads, double scale) {
  const int tq = q.dim(0), tk = k.dim(0), w = q.dim(1), wv = v.dim(1);
  const int d = w / heads, dv = wv / heads;
  std::vector<double> out(static_cast<std::size_t>(tq) * wv, 0.0);
  for (int h = 0; h < heads; ++h)
    for (int i = 0; i < tq; ++i) {
      std::vector<double> logits(tk);
      double mx = -1e300;
      for (int j = 0; j < tk; ++j) {
        double dot = 0.0;
        for (int c = 0; c < d; ++c) dot += double(q[i * w + h * d + c]) * double(k[j * w + h * d + c]);
        logits[j] = scale * dot;
        mx = std::max(mx, logits[j]);
      }
      double z = 0.0;
      for (double& l : logits) z += (l = std::exp(l - mx));
      for (int j = 0; j < tk; ++j)
        for (int c = 0; c < dv; ++c) out[i * wv + h * dv + c] += logits[j] / z * v[j * wv + h * dv + c];
    }
  return out;
}

inline Tensor uniform_tensor(Rng& rng, Shape shape, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(std::move(shape));
  for (float& x : t.values()) x = rng.uniform(lo, hi);
  return t;
}

// Words left after repeatedly erasing any lexicon phrase or token.
inline std::vector<std::string> erase_style(const StyleLexicon& lex, std::vector<std::string> words) {
  for (bool again = true; again;) {
    again = false;
    for (std::size_t i = 0; i < words.size() && !again; ++i) {
      if (lex.is_style_token(words[i])) {
        words.erase(words.begin() + static_cast<long>(i));
        again = true;
      }
      for (const auto& p : lex.phrases())
        if (!again && i + p.size() <= words.size() && std::equal(p.begin(), p.end(), words.begin() + static_cast<long>(i))) {
          words.erase(words.begin() + static_cast<long>(i), words.begin() + static_cast<long>(i + p.size()));
          again = true;
        }
    }
  }
  return words;
}

inline bool is_subsequence(const std::vector<std::string>& small, const std::vector<std::string>& big) {
  std::size_t j = 0;
  for (const auto& w : big)
    if (j < small.size() && small[j] == w) ++j;
  return j == small.size();
}

}  // namespace tristyle::fixtures
