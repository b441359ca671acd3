#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <type_traits>
#include <vector>

#include "ajepa/error.hpp"
#include "ajepa/tensor.hpp"

// Transformer building blocks with explicit forward caches and hand-written
// backward passes. Activations are [tokens x width]; a linear layer stores its
// weight as [in x out] and its bias as [1 x out].
namespace ajepa::nn {

/// Per-key exclusion flags for attention (1 = excluded). Empty means none.
using KeyMask = std::vector<std::uint8_t>;

template <typename T>
Mat<T> linear(const Mat<T>& x, const Mat<T>& w, const Mat<T>& b) {
  if (x.cols() != w.rows() || b.cols() != w.cols()) {
    throw ShapeError("linear: input " + shape_string(x.rows(), x.cols()) +
                     " vs weight " + shape_string(w.rows(), w.cols()));
  }
  Mat<T> y(x.rows(), w.cols());
  y.noalias() = x * w;
  y.rowwise() += b.row(0);
  return y;
}

/// Accumulates dW and db; returns dx.
template <typename T>
Mat<T> linear_backward(const Mat<T>& x, const Mat<T>& w, const Mat<T>& dy, Mat<T>& dw,
                       Mat<T>& db) {
  dw.noalias() += x.transpose() * dy;
  db += dy.colwise().sum();
  Mat<T> dx(dy.rows(), w.rows());
  dx.noalias() = dy * w.transpose();
  return dx;
}

template <typename T>
struct LayerNormCache {
  Mat<T> xhat;
  ColVec<T> inv_std;
};

inline constexpr double kLayerNormEps = 1e-6;

/// Normalizes each row; applies gain and bias when given.
template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const Mat<T>* gain, const Mat<T>* bias,
                  LayerNormCache<T>* cache) {
  const auto n = x.cols();
  const ColVec<T> mean = x.rowwise().mean();
  Mat<T> xhat = x.colwise() - mean;
  const ColVec<T> var = xhat.rowwise().squaredNorm() / static_cast<T>(n);
  const ColVec<T> inv_std =
      (var.array() + static_cast<T>(kLayerNormEps)).rsqrt().matrix();
  xhat = inv_std.asDiagonal() * xhat;
  Mat<T> y = xhat;
  if (gain) y = y.array().rowwise() * gain->row(0).array();
  if (bias) y.rowwise() += bias->row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = inv_std;
  }
  return y;
}

template <typename T>
Mat<T> layer_norm_backward(const LayerNormCache<T>& cache, const Mat<T>* gain,
                           const Mat<T>& dy, Mat<T>* dgain, Mat<T>* dbias) {
  if (dgain) *dgain += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  if (dbias) *dbias += dy.colwise().sum();
  Mat<T> dxhat = dy;
  if (gain) dxhat = dxhat.array().rowwise() * gain->row(0).array();
  const auto n = static_cast<T>(dy.cols());
  const ColVec<T> mean_d = dxhat.rowwise().sum() / n;
  const ColVec<T> mean_dx = (dxhat.array() * cache.xhat.array()).rowwise().sum().matrix() / n;
  Mat<T> dx = dxhat.colwise() - mean_d;
  dx -= (cache.xhat.array().colwise() * mean_dx.array()).matrix();
  return cache.inv_std.asDiagonal() * dx;
}

template <typename T>
T gelu(T x) {
  return static_cast<T>(0.5) * x *
         (static_cast<T>(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf =
      static_cast<T>(0.5) * (static_cast<T>(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(static_cast<T>(-0.5) * x * x) *
                static_cast<T>(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

template <typename T>
struct AttentionCache {
  Mat<T> input;               // normalized block input
  Mat<T> qkv;                 // [n x 3D]: q heads, then k heads, then v heads
  std::vector<Mat<T>> probs;  // per head [n x n]
  Mat<T> heads;               // concatenated head outputs [n x D]
};

inline void check_key_mask(const KeyMask& excluded, Eigen::Index n) {
  if (excluded.empty()) return;
  if (static_cast<Eigen::Index>(excluded.size()) != n) {
    throw ShapeError("key mask length does not match token count");
  }
  for (auto e : excluded) {
    if (!e) return;
  }
  throw DegenerateMaskError("attention: every key is excluded");
}

/// Multi-head scaled dot-product self-attention. Excluded keys are removed
/// from every query's softmax (weights renormalize over the survivors);
/// excluded tokens still act as queries.
template <typename T>
Mat<T> attention(const Mat<T>& x, const Mat<T>& w_qkv, const Mat<T>& b_qkv,
                 const Mat<T>& w_out, const Mat<T>& b_out, int n_heads,
                 const KeyMask& excluded, std::type_identity_t<AttentionCache<T>>* cache) {
  const auto n = x.rows();
  const auto dim = x.cols();
  if (n_heads <= 0 || dim % n_heads != 0) {
    throw ConfigError("attention width not divisible by head count");
  }
  if (w_qkv.rows() != dim || w_qkv.cols() != 3 * dim) {
    throw ShapeError("attention: qkv weight is " + shape_string(w_qkv.rows(), w_qkv.cols()));
  }
  check_key_mask(excluded, n);
  const auto hd = dim / n_heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

  Mat<T> qkv = linear(x, w_qkv, b_qkv);
  Mat<T> heads(n, dim);
  std::vector<Mat<T>> probs;
  if (cache) probs.reserve(static_cast<std::size_t>(n_heads));
  Mat<T> logits(n, n);
  for (int h = 0; h < n_heads; ++h) {
    const auto q = qkv.middleCols(h * hd, hd);
    const auto k = qkv.middleCols(dim + h * hd, hd);
    const auto v = qkv.middleCols(2 * dim + h * hd, hd);
    logits.noalias() = q * k.transpose();
    logits *= scale;
    for (Eigen::Index i = 0; i < n; ++i) {
      T row_max = -std::numeric_limits<T>::infinity();
      for (Eigen::Index j = 0; j < n; ++j) {
        if (excluded.empty() || !excluded[j]) row_max = std::max(row_max, logits(i, j));
      }
      T total = 0;
      for (Eigen::Index j = 0; j < n; ++j) {
        const T e = (excluded.empty() || !excluded[j]) ? std::exp(logits(i, j) - row_max)
                                                       : static_cast<T>(0);
        logits(i, j) = e;
        total += e;
      }
      logits.row(i) /= total;
    }
    heads.middleCols(h * hd, hd).noalias() = logits * v;
    if (cache) probs.push_back(logits);
  }
  Mat<T> out = linear(heads, w_out, b_out);
  if (cache) {
    cache->input = x;
    cache->qkv = std::move(qkv);
    cache->probs = std::move(probs);
    cache->heads = std::move(heads);
  }
  return out;
}

template <typename T>
struct AttentionGrads {
  Mat<T>& w_qkv;
  Mat<T>& b_qkv;
  Mat<T>& w_out;
  Mat<T>& b_out;
};

template <typename T>
Mat<T> attention_backward(const AttentionCache<T>& cache, const Mat<T>& w_qkv,
                          const Mat<T>& w_out, int n_heads, const Mat<T>& dy,
                          AttentionGrads<T> grads) {
  const auto n = cache.input.rows();
  const auto dim = cache.input.cols();
  const auto hd = dim / n_heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

  const Mat<T> dheads = linear_backward(cache.heads, w_out, dy, grads.w_out, grads.b_out);
  Mat<T> dqkv(n, 3 * dim);
  Mat<T> dprobs(n, n);
  for (int h = 0; h < n_heads; ++h) {
    const auto q = cache.qkv.middleCols(h * hd, hd);
    const auto k = cache.qkv.middleCols(dim + h * hd, hd);
    const auto v = cache.qkv.middleCols(2 * dim + h * hd, hd);
    const Mat<T>& p = cache.probs[static_cast<std::size_t>(h)];
    const auto dh = dheads.middleCols(h * hd, hd);
    dprobs.noalias() = dh * v.transpose();
    dqkv.middleCols(2 * dim + h * hd, hd).noalias() = p.transpose() * dh;
    const ColVec<T> row_dot = (p.array() * dprobs.array()).rowwise().sum().matrix();
    Mat<T> dlogits = (p.array() * (dprobs.colwise() - row_dot).array()).matrix();
    dlogits *= scale;
    dqkv.middleCols(h * hd, hd).noalias() = dlogits * k;
    dqkv.middleCols(dim + h * hd, hd).noalias() = dlogits.transpose() * q;
  }
  return linear_backward(cache.input, w_qkv, dqkv, grads.w_qkv, grads.b_qkv);
}

/// Parameter names of one pre-norm transformer block under `prefix`.
struct BlockNames {
  std::string ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b, ln2_g, ln2_b, fc1_w, fc1_b,
      fc2_w, fc2_b;

  explicit BlockNames(const std::string& prefix)
      : ln1_g(prefix + "ln1.g"), ln1_b(prefix + "ln1.b"), qkv_w(prefix + "qkv.w"),
        qkv_b(prefix + "qkv.b"), proj_w(prefix + "proj.w"), proj_b(prefix + "proj.b"),
        ln2_g(prefix + "ln2.g"), ln2_b(prefix + "ln2.b"), fc1_w(prefix + "fc1.w"),
        fc1_b(prefix + "fc1.b"), fc2_w(prefix + "fc2.w"), fc2_b(prefix + "fc2.b") {}
};

template <typename T>
struct BlockCache {
  LayerNormCache<T> ln1;
  AttentionCache<T> attn;
  LayerNormCache<T> ln2;
  Mat<T> mlp_in;   // normalized input to fc1
  Mat<T> hidden;   // fc1 pre-activation
  Mat<T> act;      // gelu(hidden)
};

/// x + attn(ln1(x)), then x + mlp(ln2(x)).
template <typename T>
Mat<T> block_forward(const ParamStore<T>& p, const BlockNames& nm, int n_heads,
                     const Mat<T>& x, const KeyMask& excluded, BlockCache<T>* cache) {
  const Mat<T> n1 = layer_norm(x, &p.at(nm.ln1_g), &p.at(nm.ln1_b),
                               cache ? &cache->ln1 : nullptr);
  Mat<T> h = x + attention(n1, p.at(nm.qkv_w), p.at(nm.qkv_b), p.at(nm.proj_w),
                           p.at(nm.proj_b), n_heads, excluded,
                           cache ? &cache->attn : nullptr);
  Mat<T> n2 = layer_norm(h, &p.at(nm.ln2_g), &p.at(nm.ln2_b), cache ? &cache->ln2 : nullptr);
  Mat<T> hidden = linear(n2, p.at(nm.fc1_w), p.at(nm.fc1_b));
  Mat<T> act = hidden.unaryExpr([](T v) { return gelu(v); });
  h += linear(act, p.at(nm.fc2_w), p.at(nm.fc2_b));
  if (cache) {
    cache->mlp_in = std::move(n2);
    cache->hidden = std::move(hidden);
    cache->act = std::move(act);
  }
  return h;
}

template <typename T>
Mat<T> block_backward(const ParamStore<T>& p, const BlockNames& nm, int n_heads,
                      const BlockCache<T>& cache, const Mat<T>& dy, ParamStore<T>& g) {
  // MLP branch.
  Mat<T> dact = linear_backward(cache.act, p.at(nm.fc2_w), dy, g.at(nm.fc2_w), g.at(nm.fc2_b));
  const Mat<T> dhidden =
      (dact.array() * cache.hidden.unaryExpr([](T v) { return gelu_grad(v); }).array()).matrix();
  const Mat<T> dn2 =
      linear_backward(cache.mlp_in, p.at(nm.fc1_w), dhidden, g.at(nm.fc1_w), g.at(nm.fc1_b));
  Mat<T> dh = dy + layer_norm_backward(cache.ln2, &p.at(nm.ln2_g), dn2, &g.at(nm.ln2_g),
                                       &g.at(nm.ln2_b));
  // Attention branch.
  const Mat<T> dn1 = attention_backward<T>(
      cache.attn, p.at(nm.qkv_w), p.at(nm.proj_w), n_heads, dh,
      {g.at(nm.qkv_w), g.at(nm.qkv_b), g.at(nm.proj_w), g.at(nm.proj_b)});
  dh += layer_norm_backward(cache.ln1, &p.at(nm.ln1_g), dn1, &g.at(nm.ln1_g), &g.at(nm.ln1_b));
  return dh;
}

}  // namespace ajepa::nn
