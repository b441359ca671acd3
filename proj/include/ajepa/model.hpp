#pragma once

#include <algorithm>
#include <string>
#include <type_traits>
#include <vector>

#include "ajepa/error.hpp"
#include "ajepa/maskgen.hpp"
#include "ajepa/nn.hpp"
#include "ajepa/rng.hpp"
#include "ajepa/spectro.hpp"
#include "ajepa/tensor.hpp"

namespace ajepa {

/// Transformer sizes. Desk defaults; the ViT-B analog is embed_dim 768,
/// enc_depth 12, n_heads 12, with a 16-layer 512-wide predictor.
struct ModelConfig {
  int embed_dim = 64;
  int enc_depth = 4;
  int n_heads = 4;
  int pred_depth = 4;
  int pred_dim = 32;
  double mlp_ratio = 4.0;
  int patch_len = 256;
  double init_std = 0.02;

  int mlp_hidden(int width) const {
    return static_cast<int>(std::lround(width * mlp_ratio));
  }

  void validate() const {
    if (embed_dim <= 0 || enc_depth < 0 || pred_depth < 0 || pred_dim <= 0 ||
        patch_len <= 0 || n_heads <= 0) {
      throw ConfigError("model sizes must be positive");
    }
    if (embed_dim % n_heads != 0) throw ConfigError("embed_dim not divisible by n_heads");
    if (pred_dim % n_heads != 0) throw ConfigError("pred_dim not divisible by n_heads");
    if (pred_dim > embed_dim) throw ConfigError("pred_dim must not exceed embed_dim");
    if (embed_dim % 4 != 0 || pred_dim % 4 != 0) {
      throw ConfigError("embed_dim and pred_dim must be multiples of 4");
    }
    if (!(mlp_ratio > 0)) throw ConfigError("mlp_ratio must be positive");
  }
};

/// Config plus the fixed positional tables for one patch grid.
template <typename T>
struct ModelGeometry {
  ModelConfig cfg;
  GridShape grid;
  Mat<T> encoder_pos;    // [rows*cols x embed_dim]
  Mat<T> predictor_pos;  // [rows*cols x pred_dim]

  ModelGeometry(const ModelConfig& c, GridShape g) : cfg(c), grid(g) {
    cfg.validate();
    encoder_pos = sincos_positions(grid, cfg.embed_dim).template cast<T>();
    predictor_pos = sincos_positions(grid, cfg.pred_dim).template cast<T>();
  }
};

template <typename T>
struct TokenSequence {
  Mat<T> features;
  std::vector<int> positions;
};

enum class TargetNorm { layernorm, none };

namespace detail {

template <typename T>
Mat<T> init_matrix(int rows, int cols, double stddev, Rng& rng) {
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<T>(rng.truncated_normal(stddev));
  }
  return m;
}

template <typename T>
void add_block(ParamStore<T>& p, const std::string& prefix, int width, int hidden,
               double stddev, Rng& rng) {
  const nn::BlockNames nm(prefix);
  p.add(nm.ln1_g, Mat<T>::Ones(1, width));
  p.add(nm.ln1_b, Mat<T>::Zero(1, width));
  p.add(nm.qkv_w, init_matrix<T>(width, 3 * width, stddev, rng));
  p.add(nm.qkv_b, Mat<T>::Zero(1, 3 * width));
  p.add(nm.proj_w, init_matrix<T>(width, width, stddev, rng));
  p.add(nm.proj_b, Mat<T>::Zero(1, width));
  p.add(nm.ln2_g, Mat<T>::Ones(1, width));
  p.add(nm.ln2_b, Mat<T>::Zero(1, width));
  p.add(nm.fc1_w, init_matrix<T>(width, hidden, stddev, rng));
  p.add(nm.fc1_b, Mat<T>::Zero(1, hidden));
  p.add(nm.fc2_w, init_matrix<T>(hidden, width, stddev, rng));
  p.add(nm.fc2_b, Mat<T>::Zero(1, width));
}

inline std::string block_prefix(const char* root, int i) {
  return std::string(root) + "block" + std::to_string(i) + ".";
}

}  // namespace detail

/// Context-encoder parameters (also the layout of the target encoder).
template <typename T>
ParamStore<T> init_encoder(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamStore<T> p;
  p.add("enc.patch_proj.w", detail::init_matrix<T>(cfg.patch_len, cfg.embed_dim, cfg.init_std, rng));
  p.add("enc.patch_proj.b", Mat<T>::Zero(1, cfg.embed_dim));
  for (int i = 0; i < cfg.enc_depth; ++i) {
    detail::add_block(p, detail::block_prefix("enc.", i), cfg.embed_dim,
                      cfg.mlp_hidden(cfg.embed_dim), cfg.init_std, rng);
  }
  p.add("enc.norm.g", Mat<T>::Ones(1, cfg.embed_dim));
  p.add("enc.norm.b", Mat<T>::Zero(1, cfg.embed_dim));
  return p;
}

template <typename T>
ParamStore<T> init_predictor(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamStore<T> p;
  p.add("pred.proj_in.w", detail::init_matrix<T>(cfg.embed_dim, cfg.pred_dim, cfg.init_std, rng));
  p.add("pred.proj_in.b", Mat<T>::Zero(1, cfg.pred_dim));
  p.add("pred.mask_token", detail::init_matrix<T>(1, cfg.pred_dim, cfg.init_std, rng));
  for (int i = 0; i < cfg.pred_depth; ++i) {
    detail::add_block(p, detail::block_prefix("pred.", i), cfg.pred_dim,
                      cfg.mlp_hidden(cfg.pred_dim), cfg.init_std, rng);
  }
  p.add("pred.norm.g", Mat<T>::Ones(1, cfg.pred_dim));
  p.add("pred.norm.b", Mat<T>::Zero(1, cfg.pred_dim));
  p.add("pred.proj_out.w", detail::init_matrix<T>(cfg.pred_dim, cfg.embed_dim, cfg.init_std, rng));
  p.add("pred.proj_out.b", Mat<T>::Zero(1, cfg.embed_dim));
  return p;
}

/// Linear classification head over pooled encoder features.
template <typename T>
ParamStore<T> init_head(int embed_dim, int n_classes, double stddev, Rng& rng) {
  if (embed_dim <= 0 || n_classes <= 0) throw ConfigError("head sizes must be positive");
  ParamStore<T> p;
  p.add("head.w", detail::init_matrix<T>(embed_dim, n_classes, stddev, rng));
  p.add("head.b", Mat<T>::Zero(1, n_classes));
  return p;
}

/// Activations kept for the backward pass of an encoder run.
template <typename T>
struct EncoderCache {
  std::vector<int> positions;
  Mat<T> patches;
  std::vector<nn::BlockCache<T>> blocks;
  nn::LayerNormCache<T> norm;
};

inline void check_positions(const std::vector<int>& positions, GridShape grid) {
  if (positions.empty()) throw DegenerateMaskError("empty token set");
  int prev = -1;
  for (int p : positions) {
    if (p < 0 || p >= grid.size()) throw ShapeError("patch index out of range");
    if (p == prev) throw PreconditionError("duplicate patch index");
    prev = p;
  }
}

/// token_i = patch_i * W + b + pos_i over the selected positions.
template <typename T>
TokenSequence<T> embed_patches(const PatchGrid& grid, const std::vector<int>& positions,
                               const ModelGeometry<T>& geo, const ParamStore<T>& theta) {
  if (!(grid.grid == geo.grid) || grid.tokens.cols() != geo.cfg.patch_len) {
    throw ShapeError("patch grid " + shape_string(grid.grid.rows, grid.grid.cols) + " x " +
                     std::to_string(grid.tokens.cols()) + " does not match model config");
  }
  for (int p : positions) {
    if (p < 0 || p >= geo.grid.size()) throw ShapeError("patch index out of range");
  }
  TokenSequence<T> seq;
  seq.positions = positions;
  const Mat<T> patches = gather_rows(grid.tokens, positions).template cast<T>();
  seq.features = nn::linear(patches, theta.at("enc.patch_proj.w"), theta.at("enc.patch_proj.b")) +
                 gather_rows(geo.encoder_pos, positions);
  return seq;
}

inline std::vector<int> all_positions(GridShape grid) {
  std::vector<int> p(static_cast<std::size_t>(grid.size()));
  for (int i = 0; i < grid.size(); ++i) p[i] = i;
  return p;
}

/// Key exclusions for an encoder run: none (empty), one set shared by every
/// block, or one set per block. Each set is indexed like the token positions.
using LayerKeyMasks = std::vector<nn::KeyMask>;

/// Embeds the given positions, runs the encoder blocks, then the final norm.
template <typename T>
TokenSequence<T> encoder_forward(const PatchGrid& grid, const std::vector<int>& positions,
                                 const ModelGeometry<T>& geo, const ParamStore<T>& theta,
                                 const LayerKeyMasks& excluded,
                                 std::type_identity_t<EncoderCache<T>>* cache) {
  const auto depth = static_cast<std::size_t>(geo.cfg.enc_depth);
  if (excluded.size() > 1 && excluded.size() != depth) {
    throw ShapeError("per-layer key masks must match encoder depth");
  }
  static const nn::KeyMask kNone;
  TokenSequence<T> seq = embed_patches(grid, positions, geo, theta);
  if (cache) {
    cache->positions = positions;
    cache->patches = gather_rows(grid.tokens, positions).template cast<T>();
    cache->blocks.assign(static_cast<std::size_t>(geo.cfg.enc_depth), {});
  }
  for (int i = 0; i < geo.cfg.enc_depth; ++i) {
    const nn::BlockNames nm(detail::block_prefix("enc.", i));
    const nn::KeyMask& mask = excluded.empty()       ? kNone
                              : excluded.size() == 1 ? excluded.front()
                                                     : excluded[static_cast<std::size_t>(i)];
    seq.features = nn::block_forward(theta, nm, geo.cfg.n_heads, seq.features, mask,
                                     cache ? &cache->blocks[static_cast<std::size_t>(i)] : nullptr);
  }
  seq.features = nn::layer_norm(seq.features, &theta.at("enc.norm.g"), &theta.at("enc.norm.b"),
                                cache ? &cache->norm : nullptr);
  return seq;
}

/// Accumulates encoder gradients into `grads` given d(output features).
template <typename T>
void encoder_backward(const ModelGeometry<T>& geo, const ParamStore<T>& theta,
                      const EncoderCache<T>& cache, const Mat<T>& d_out, ParamStore<T>& grads) {
  Mat<T> d = nn::layer_norm_backward(cache.norm, &theta.at("enc.norm.g"), d_out,
                                     &grads.at("enc.norm.g"), &grads.at("enc.norm.b"));
  for (int i = geo.cfg.enc_depth - 1; i >= 0; --i) {
    const nn::BlockNames nm(detail::block_prefix("enc.", i));
    d = nn::block_backward(theta, nm, geo.cfg.n_heads, cache.blocks[static_cast<std::size_t>(i)],
                           d, grads);
  }
  nn::linear_backward(cache.patches, theta.at("enc.patch_proj.w"), d,
                      grads.at("enc.patch_proj.w"), grads.at("enc.patch_proj.b"));
}

/// Context encoder: only the plan's context patches are embedded and encoded.
template <typename T>
TokenSequence<T> encode_context(const PatchGrid& grid, const MaskPlan& plan,
                                const ModelGeometry<T>& geo, const ParamStore<T>& theta,
                                std::type_identity_t<EncoderCache<T>>* cache = nullptr) {
  if (plan.context.empty()) throw DegenerateMaskError("empty context mask");
  check_positions(plan.context.indices, geo.grid);
  return encoder_forward(grid, plan.context.indices, geo, theta, {}, cache);
}

/// Per-token normalization without gain or bias.
template <typename T>
Mat<T> normalize_tokens(const Mat<T>& features) {
  return nn::layer_norm<T>(features, nullptr, nullptr, nullptr);
}

/// Target encoder over the full grid. Never caches activations: nothing
/// downstream can propagate a gradient into the target weights.
template <typename T>
TokenSequence<T> encode_target(const PatchGrid& grid, const ModelGeometry<T>& geo,
                               const ParamStore<T>& target_theta,
                               TargetNorm norm = TargetNorm::none) {
  TokenSequence<T> seq =
      encoder_forward(grid, all_positions(geo.grid), geo, target_theta, {}, nullptr);
  if (norm == TargetNorm::layernorm) seq.features = normalize_tokens(seq.features);
  return seq;
}

template <typename T>
struct PredictorCache {
  Mat<T> context_features;
  std::vector<nn::BlockCache<T>> blocks;
  nn::LayerNormCache<T> norm;
  Mat<T> target_rows;  // normalized predictor output at the target slots
  Eigen::Index n_context = 0;
};

inline void check_disjoint(const std::vector<int>& context, const MaskIndexSet& targets) {
  if (targets.empty()) throw PreconditionError("empty target mask");
  for (int t : targets.indices) {
    if (std::binary_search(context.begin(), context.end(), t)) {
      throw PreconditionError("target position " + std::to_string(t) + " is also in the context");
    }
  }
}

/// Predicts target-encoder features at `targets` from encoded context tokens.
/// Context features are projected to the predictor width, mask tokens with
/// positional encodings are appended for each target, and the outputs at the
/// target slots are projected back to embed_dim. Returns [|targets| x D].
template <typename T>
Mat<T> predict_targets(const TokenSequence<T>& ctx, const MaskIndexSet& targets,
                       const ModelGeometry<T>& geo, const ParamStore<T>& phi,
                       std::type_identity_t<PredictorCache<T>>* cache = nullptr) {
  check_disjoint(ctx.positions, targets);
  if (ctx.features.cols() != geo.cfg.embed_dim ||
      ctx.features.rows() != static_cast<Eigen::Index>(ctx.positions.size())) {
    throw ShapeError("context features do not match embed_dim/positions");
  }
  const auto n_ctx = static_cast<Eigen::Index>(ctx.positions.size());
  const auto n_tgt = static_cast<Eigen::Index>(targets.size());
  Mat<T> z(n_ctx + n_tgt, geo.cfg.pred_dim);
  z.topRows(n_ctx) = nn::linear(ctx.features, phi.at("pred.proj_in.w"), phi.at("pred.proj_in.b")) +
                     gather_rows(geo.predictor_pos, ctx.positions);
  z.bottomRows(n_tgt) = gather_rows(geo.predictor_pos, targets.indices);
  z.bottomRows(n_tgt).rowwise() += phi.at("pred.mask_token").row(0);
  if (cache) {
    cache->context_features = ctx.features;
    cache->blocks.assign(static_cast<std::size_t>(geo.cfg.pred_depth), {});
    cache->n_context = n_ctx;
  }
  for (int i = 0; i < geo.cfg.pred_depth; ++i) {
    const nn::BlockNames nm(detail::block_prefix("pred.", i));
    z = nn::block_forward(phi, nm, geo.cfg.n_heads, z, {},
                          cache ? &cache->blocks[static_cast<std::size_t>(i)] : nullptr);
  }
  z = nn::layer_norm(z, &phi.at("pred.norm.g"), &phi.at("pred.norm.b"),
                     cache ? &cache->norm : nullptr);
  Mat<T> rows = z.bottomRows(n_tgt);
  Mat<T> out = nn::linear(rows, phi.at("pred.proj_out.w"), phi.at("pred.proj_out.b"));
  if (cache) cache->target_rows = std::move(rows);
  return out;
}

/// Accumulates predictor gradients into `phi_grads` and returns d(context
/// features).
template <typename T>
Mat<T> predictor_backward(const ModelGeometry<T>& geo, const ParamStore<T>& phi,
                          const PredictorCache<T>& cache, const Mat<T>& d_out,
                          ParamStore<T>& phi_grads) {
  const Mat<T> d_rows = nn::linear_backward(cache.target_rows, phi.at("pred.proj_out.w"), d_out,
                                            phi_grads.at("pred.proj_out.w"),
                                            phi_grads.at("pred.proj_out.b"));
  const auto n_ctx = cache.n_context;
  const auto n_tgt = d_rows.rows();
  Mat<T> d_norm = Mat<T>::Zero(n_ctx + n_tgt, geo.cfg.pred_dim);
  d_norm.bottomRows(n_tgt) = d_rows;
  Mat<T> d = nn::layer_norm_backward(cache.norm, &phi.at("pred.norm.g"), d_norm,
                                     &phi_grads.at("pred.norm.g"), &phi_grads.at("pred.norm.b"));
  for (int i = geo.cfg.pred_depth - 1; i >= 0; --i) {
    const nn::BlockNames nm(detail::block_prefix("pred.", i));
    d = nn::block_backward(phi, nm, geo.cfg.n_heads, cache.blocks[static_cast<std::size_t>(i)], d,
                           phi_grads);
  }
  phi_grads.at("pred.mask_token") += d.bottomRows(n_tgt).colwise().sum();
  const Mat<T> d_ctx_proj = d.topRows(n_ctx);
  return nn::linear_backward(cache.context_features, phi.at("pred.proj_in.w"), d_ctx_proj,
                             phi_grads.at("pred.proj_in.w"), phi_grads.at("pred.proj_in.b"));
}

/// target <- m * target + (1 - m) * online, array by array.
template <typename T>
void ema_update(ParamStore<T>& target, const ParamStore<T>& online, double momentum) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ConfigError("EMA momentum must be in [0, 1]");
  target.require_same_layout(online, "ema_update");
  const T m = static_cast<T>(momentum);
  const T one_minus = static_cast<T>(1.0 - momentum);
  auto it = online.begin();
  for (auto& [name, a] : target) {
    a = m * a + one_minus * it->second;
    ++it;
  }
}

}  // namespace ajepa
