#pragma once

// Independent reference computations used only by tests. Nothing here calls
// into the runtime's attention, block, or injection code paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "sinktrack/model.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;
using sinktrack::Model;
using sinktrack::TokenId;

// Float naive triple loop, k ascending.
inline std::vector<float> matmul_f32(const std::vector<float>& a, const std::vector<float>& b, std::size_t m,
                                     std::size_t k, std::size_t n) {
  std::vector<float> c(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      float s = 0.0f;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
  return c;
}

inline std::vector<double> layernorm_two_pass(const std::vector<double>& x, const std::vector<double>& g,
                                              const std::vector<double>& b, double eps) {
  double mean = 0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) / std::sqrt(var + eps) * g[i] + b[i];
  return out;
}

inline std::vector<double> softmax(std::vector<double> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  double s = 0;
  for (double& v : x) {
    v = std::exp(v - mx);
    s += v;
  }
  for (double& v : x) v /= s;
  return x;
}

inline Mat to_mat(const sinktrack::Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

inline Mat mul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t p = 0; p < b.size(); ++p)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][p] * b[p][j];
  return c;
}

inline std::vector<double> vec(const sinktrack::Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Dense causal MHA over all rows at once: returns per-row head outputs before
// W_O plus the attention matrices [head][i][j].
struct DenseAttention {
  Mat heads;  // n×d
  std::vector<Mat> weights;
};

inline DenseAttention dense_causal_attention(const Mat& q, const Mat& k, const Mat& v, std::size_t n_heads) {
  const std::size_t n = q.size();
  const std::size_t d = q[0].size();
  const std::size_t dh = d / n_heads;
  DenseAttention out{Mat(n, std::vector<double>(d, 0.0)), std::vector<Mat>(n_heads, Mat(n, std::vector<double>(n, 0.0)))};
  for (std::size_t h = 0; h < n_heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(i + 1);
      for (std::size_t j = 0; j <= i; ++j) {
        double dot = 0;
        for (std::size_t p = 0; p < dh; ++p) dot += q[i][h * dh + p] * k[j][h * dh + p];
        s[j] = dot / std::sqrt(static_cast<double>(dh));
      }
      s = softmax(s);
      for (std::size_t j = 0; j <= i; ++j) {
        out.weights[h][i][j] = s[j];
        for (std::size_t p = 0; p < dh; ++p) out.heads[i][h * dh + p] += s[j] * v[j][h * dh + p];
      }
    }
  }
  return out;
}

// Single query against m key/value rows, all heads; pre-W_O.
inline std::vector<double> dense_cross_attention(const std::vector<double>& q, const Mat& k, const Mat& v,
                                                 std::size_t n_heads) {
  const std::size_t d = q.size();
  const std::size_t dh = d / n_heads;
  std::vector<double> out(d, 0.0);
  for (std::size_t h = 0; h < n_heads; ++h) {
    std::vector<double> s(k.size());
    for (std::size_t j = 0; j < k.size(); ++j) {
      double dot = 0;
      for (std::size_t p = 0; p < dh; ++p) dot += q[h * dh + p] * k[j][h * dh + p];
      s[j] = dot / std::sqrt(static_cast<double>(dh));
    }
    s = softmax(s);
    for (std::size_t j = 0; j < k.size(); ++j)
      for (std::size_t p = 0; p < dh; ++p) out[h * dh + p] += s[j] * v[j][h * dh + p];
  }
  return out;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// Post-norm block, all rows at once, no cache.
inline Mat dense_block(const Mat& h, const Model& model, std::size_t layer, Mat* attn_out = nullptr) {
  const auto& lw = model.layer(layer);
  const Mat q = mul(h, to_mat(lw.wq)), k = mul(h, to_mat(lw.wk)), v = mul(h, to_mat(lw.wv));
  const auto att = dense_causal_attention(q, k, v, model.config.n_heads);
  const Mat o = mul(att.heads, to_mat(lw.wo));
  if (attn_out) *attn_out = o;
  const double eps = model.config.ln_eps;
  Mat m(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    std::vector<double> x(h[i].size());
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = h[i][j] + o[i][j];
    m[i] = layernorm_two_pass(x, vec(lw.ln1_gain), vec(lw.ln1_bias), eps);
  }
  const Mat f1 = mul(m, to_mat(lw.ffn_w1));
  Mat act = f1;
  for (auto& r : act)
    for (std::size_t j = 0; j < r.size(); ++j) r[j] = gelu(r[j] + lw.ffn_b1[j]);
  const Mat f2 = mul(act, to_mat(lw.ffn_w2));
  Mat out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    std::vector<double> x(h[i].size());
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = m[i][j] + f2[i][j] + lw.ffn_b2[j];
    out[i] = layernorm_two_pass(x, vec(lw.ln2_gain), vec(lw.ln2_bias), eps);
  }
  return out;
}

inline Mat embed(const std::vector<TokenId>& tokens, const Model& model) {
  Mat h;
  for (auto t : tokens) {
    auto r = model.weights.embedding.row(t);
    h.emplace_back(r.begin(), r.end());
  }
  return h;
}

// Full-sequence forward with no cache; returns the last row's logits.
inline std::vector<double> full_forward_logits(const std::vector<TokenId>& tokens, const Model& model) {
  Mat h = embed(tokens, model);
  for (std::size_t l = 0; l < model.config.n_layers; ++l) h = dense_block(h, model, l);
  const Mat last{h.back()};
  return mul(last, to_mat(model.weights.unembed))[0];
}

inline std::uint32_t argmax_lowest(const std::vector<double>& x) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < x.size(); ++i)
    if (x[i] > x[best]) best = i;
  return static_cast<std::uint32_t>(best);
}

// Spearman by definition: average ranks via pairwise counting, then Pearson on
// the ranks using pairwise differences. Ranks are doubled so every sum is an
// exact integer.
inline double spearman_definitional(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  auto doubled_rank = [](const std::vector<double>& v, std::size_t i) {
    std::int64_t less = 0, equal = 0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (v[j] < v[i]) ++less;
      else if (v[j] == v[i] && j != i) ++equal;
    }
    // rank = less + 1 + equal/2
    return 2 * less + 2 + equal;
  };
  std::vector<std::int64_t> rx(n), ry(n);
  for (std::size_t i = 0; i < n; ++i) {
    rx[i] = doubled_rank(x, i);
    ry[i] = doubled_rank(y, i);
  }
  std::int64_t sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      sxy += (rx[i] - rx[j]) * (ry[i] - ry[j]);
      sxx += (rx[i] - rx[j]) * (rx[i] - rx[j]);
      syy += (ry[i] - ry[j]) * (ry[i] - ry[j]);
    }
  }
  return static_cast<double>(sxy) / std::sqrt(static_cast<double>(sxx) * static_cast<double>(syy));
}

}  // namespace oracle
