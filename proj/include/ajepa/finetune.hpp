#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <type_traits>
#include <vector>

#include "ajepa/dataset.hpp"
#include "ajepa/error.hpp"
#include "ajepa/maskgen.hpp"
#include "ajepa/metrics.hpp"
#include "ajepa/model.hpp"
#include "ajepa/optim.hpp"
#include "ajepa/pretrain.hpp"
#include "ajepa/rng.hpp"

namespace ajepa {

/// Regularized masking: a random token subset is removed as attention keys.
struct RMConfig {
  double ratio = 0.10;
  bool active = true;
  // Draw a fresh subset for every encoder block instead of sharing one.
  bool per_layer = false;
};

inline int rm_count(int n_tokens, double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("RM ratio must be in [0, 1)");
  const int k = static_cast<int>(std::floor(ratio * n_tokens));
  if (k >= n_tokens) throw ConfigError("RM ratio leaves no unmasked token");
  return k;
}

/// floor(ratio * n) grid positions drawn uniformly without replacement.
inline MaskIndexSet sample_rm_mask(GridShape grid, double ratio, Rng& rng) {
  const int n = grid.size();
  const int k = rm_count(n, ratio);
  std::vector<int> pool(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pool[i] = i;
  for (int i = 0; i < k; ++i) {
    const auto j = static_cast<int>(rng.uniform_int(i, n - 1));
    std::swap(pool[i], pool[j]);
  }
  MaskIndexSet out{{pool.begin(), pool.begin() + k}, grid};
  std::sort(out.indices.begin(), out.indices.end());
  return out;
}

/// Key-exclusion flags over the full raster for the given positions.
inline nn::KeyMask key_mask_from(const MaskIndexSet& excluded) {
  nn::KeyMask mask(static_cast<std::size_t>(excluded.grid.size()), 0);
  for (int i : excluded.indices) mask[i] = 1;
  return mask;
}

/// Key masks for one training forward pass; empty when RM is off.
inline LayerKeyMasks draw_rm_masks(GridShape grid, int depth, const RMConfig& rm, Rng& rng) {
  LayerKeyMasks masks;
  if (!rm.active || rm_count(grid.size(), rm.ratio) == 0) return masks;
  const int draws = rm.per_layer ? depth : 1;
  for (int i = 0; i < draws; ++i) masks.push_back(key_mask_from(sample_rm_mask(grid, rm.ratio, rng)));
  return masks;
}

/// Full-grid encoder pass with RM key exclusion in every block, mean-pooled
/// over all tokens. With rm.active false this is the plain dense forward.
template <typename T>
RowVec<T> rm_forward(const PatchGrid& grid, const ModelGeometry<T>& geo, const ParamStore<T>& theta,
                     const RMConfig& rm, Rng& rng,
                     std::type_identity_t<EncoderCache<T>>* cache = nullptr) {
  const LayerKeyMasks masks = draw_rm_masks(geo.grid, geo.cfg.enc_depth, rm, rng);
  const TokenSequence<T> seq = encoder_forward(grid, all_positions(geo.grid), geo, theta, masks, cache);
  return seq.features.colwise().mean();
}

/// Deterministic evaluation forward (no RM).
template <typename T>
RowVec<T> eval_forward(const PatchGrid& grid, const ModelGeometry<T>& geo, const ParamStore<T>& theta) {
  const TokenSequence<T> seq = encoder_forward(grid, all_positions(geo.grid), geo, theta, {}, nullptr);
  return seq.features.colwise().mean();
}

template <typename T>
RowVec<T> classify(const RowVec<T>& pooled, const ParamStore<T>& head) {
  const Mat<T>& w = head.at("head.w");
  const Mat<T>& b = head.at("head.b");
  if (pooled.cols() != w.rows()) {
    throw ShapeError("classify: pooled width " + std::to_string(pooled.cols()) +
                     " vs head input " + std::to_string(w.rows()));
  }
  return pooled * w + b;
}

/// Softmax cross-entropy; writes d(loss)/d(logits) when `grad` is given.
template <typename T>
double softmax_cross_entropy(const RowVec<T>& logits, int label,
                             std::type_identity_t<RowVec<T>>* grad) {
  if (label < 0 || label >= logits.cols()) throw ShapeError("label out of range");
  const double max = static_cast<double>(logits.maxCoeff());
  RowVec<double> p = (logits.template cast<double>().array() - max).exp().matrix();
  const double z = p.sum();
  p /= z;
  if (grad) {
    RowVec<double> g = p;
    g(label) -= 1.0;
    *grad = g.cast<T>();
  }
  return -(static_cast<double>(logits(label)) - max - std::log(z));
}

/// Mean over classes of per-class sigmoid binary cross-entropy.
template <typename T>
double sigmoid_bce(const RowVec<T>& logits, const std::vector<int>& positives,
                   std::type_identity_t<RowVec<T>>* grad) {
  const auto c = logits.cols();
  double loss = 0.0;
  if (grad) grad->resize(c);
  for (Eigen::Index k = 0; k < c; ++k) {
    const double x = static_cast<double>(logits(k));
    const double y =
        std::find(positives.begin(), positives.end(), static_cast<int>(k)) != positives.end() ? 1.0 : 0.0;
    // log(1 + e^-|x|) form for stability.
    loss += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
    if (grad) (*grad)(k) = static_cast<T>((1.0 / (1.0 + std::exp(-x)) - y) / static_cast<double>(c));
  }
  return loss / static_cast<double>(c);
}

/// Class scores used for ranking metrics: softmax probabilities, or per-class
/// sigmoids for multi-label data.
template <typename T>
RowVec<double> class_scores(const RowVec<T>& logits, bool multi_label) {
  RowVec<double> x = logits.template cast<double>();
  if (multi_label) return (1.0 / (1.0 + (-x.array()).exp())).matrix();
  RowVec<double> p = (x.array() - x.maxCoeff()).exp().matrix();
  return p / p.sum();
}

struct FinetuneConfig {
  FrontendConfig frontend;
  ModelConfig model;
  int epochs = 5;
  int batch_size = 16;
  double lr = 1e-3;
  double weight_decay = 0.05;
  std::int64_t warmup_steps = 10;
  RMConfig rm;
  bool freeze_encoder = false;
  double head_init_std = 0.02;

  GridShape grid() const { return {frontend.grid_rows(), frontend.grid_cols()}; }

  void validate() const {
    frontend.validate();
    model.validate();
    if (model.patch_len != frontend.patch_len()) {
      throw ConfigError("patch_len must equal patch height * width");
    }
    if (epochs < 0 || batch_size <= 0) throw ConfigError("epochs/batch_size out of range");
    if (!(lr > 0)) throw ConfigError("finetune lr must be positive");
    rm_count(grid().size(), rm.ratio);
  }
};

/// Deterministic view: first target_frames frames, standardized.
inline PatchGrid eval_view(const Clip& clip, const FrontendConfig& cfg) {
  MelSpectrogram m;
  m.values = standardize(fit_frames(clip.frames, cfg.target_frames, std::log(cfg.log_floor)));
  m.frame_hop_ms = cfg.hop_ms;
  return patchify(m, cfg.patch);
}

struct FinetuneRow {
  int epoch = 0;
  double train_loss = 0.0;
  double eval_accuracy = 0.0;
  double eval_map = 0.0;
};

struct EvalResult {
  double accuracy = 0.0;
  double map = 0.0;
  Mat<double> scores;
};

inline std::vector<std::vector<int>> label_sets(const Dataset& ds) {
  std::vector<std::vector<int>> out;
  out.reserve(ds.size());
  for (const auto& c : ds.clips) {
    if (c.labels.empty()) throw PreconditionError("clip '" + c.name + "' has no label");
    out.push_back(c.labels);
  }
  return out;
}

inline EvalResult evaluate(const Dataset& ds, const ParamStore<float>& theta, const ParamStore<float>& head,
                           const FrontendConfig& frontend, const ModelGeometry<float>& geo) {
  const int n_classes = static_cast<int>(head.at("head.b").cols());
  EvalResult r;
  r.scores.resize(static_cast<Eigen::Index>(ds.size()), n_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const RowVec<float> pooled = eval_forward(eval_view(ds.clips[i], frontend), geo, theta);
    r.scores.row(static_cast<Eigen::Index>(i)) = class_scores(classify(pooled, head), ds.multi_label);
  }
  const auto labels = label_sets(ds);
  r.accuracy = metric_accuracy(r.scores, labels);
  r.map = metric_map(r.scores, labels);
  return r;
}

struct FinetuneResult {
  ParamStore<float> encoder;
  ParamStore<float> head;
  std::vector<FinetuneRow> rows;
};

/// Supervised adaptation of a (pretrained) context encoder plus a new linear
/// head. RM is applied in training forwards only. With freeze_encoder the
/// encoder is untouched and only the head trains (linear probe).
inline FinetuneResult finetune_loop(const ParamStore<float>& encoder, const Dataset& train,
                                    const Dataset& eval, const FinetuneConfig& cfg,
                                    std::uint64_t seed,
                                    const std::function<void(const FinetuneRow&)>& on_epoch = {}) {
  cfg.validate();
  if (train.clips.empty() || eval.clips.empty()) throw PreconditionError("finetune: empty split");
  if (train.n_classes() == 0) throw PreconditionError("finetune: training data is unlabeled");
  const ModelGeometry<float> geo(cfg.model, cfg.grid());
  {
    Rng layout_rng(0);
    init_encoder<float>(cfg.model, layout_rng).require_same_layout(encoder, "finetune encoder");
  }
  FinetuneResult res;
  res.encoder = encoder;
  Rng head_rng = Rng::stream(seed, "head-init");
  res.head = init_head<float>(cfg.model.embed_dim, train.n_classes(), cfg.head_init_std, head_rng);

  const bool multi = train.multi_label;
  const auto labels = label_sets(train);
  std::vector<PatchGrid> views;
  views.reserve(train.size());
  for (const auto& c : train.clips) views.push_back(eval_view(c, cfg.frontend));

  const bool fixed_features = cfg.freeze_encoder && (!cfg.rm.active || rm_count(geo.grid.size(), cfg.rm.ratio) == 0);
  std::vector<RowVec<float>> features;
  if (fixed_features) {
    for (const auto& v : views) features.push_back(eval_forward(v, geo, res.encoder));
  }

  const auto batch = static_cast<std::size_t>(std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), train.size()));
  const std::int64_t per_epoch = steps_per_epoch(train.size(), static_cast<int>(batch));
  OptimizerConfig opt;
  opt.lr = cfg.lr;
  opt.weight_decay = cfg.weight_decay;
  opt.total_steps = std::max<std::int64_t>(per_epoch * cfg.epochs, 1);
  opt.warmup_steps = std::min(cfg.warmup_steps, opt.total_steps - 1);
  opt.batch_size = static_cast<int>(batch);
  AdamW<float> enc_opt(res.encoder);
  AdamW<float> head_opt(res.head);

  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(train.size(), seed ^ 0x5eedf17eULL, epoch);
    double epoch_loss = 0.0;
    for (std::int64_t b = 0; b < per_epoch; ++b, ++step) {
      ParamStore<float> enc_grads = res.encoder.zeros_like();
      ParamStore<float> head_grads = res.head.zeros_like();
      const float weight = 1.0f / static_cast<float>(batch);
      double batch_loss = 0.0;
      for (std::size_t i = 0; i < batch; ++i) {
        const std::size_t clip = order[static_cast<std::size_t>(b) * batch + i];
        EncoderCache<float> cache;
        RowVec<float> pooled;
        const bool need_encoder_grad = !cfg.freeze_encoder;
        if (fixed_features) {
          pooled = features[clip];
        } else {
          Rng rm_rng = Rng::stream(seed, "rm", static_cast<std::uint64_t>(step), i);
          pooled = rm_forward(views[clip], geo, res.encoder, cfg.rm, rm_rng,
                              need_encoder_grad ? &cache : nullptr);
        }
        const RowVec<float> logits = classify(pooled, res.head);
        RowVec<float> d_logits;
        batch_loss += multi ? sigmoid_bce(logits, labels[clip], &d_logits)
                            : softmax_cross_entropy(logits, labels[clip].front(), &d_logits);
        d_logits *= weight;
        head_grads.at("head.w").noalias() += pooled.transpose() * d_logits;
        head_grads.at("head.b") += d_logits;
        if (need_encoder_grad) {
          const RowVec<float> d_pooled = d_logits * res.head.at("head.w").transpose();
          const auto n_tokens = static_cast<Eigen::Index>(geo.grid.size());
          Mat<float> d_features = d_pooled.replicate(n_tokens, 1) / static_cast<float>(n_tokens);
          encoder_backward(geo, res.encoder, cache, d_features, enc_grads);
        }
      }
      const double lr = lr_at(step, opt);
      head_opt.step(res.head, head_grads, lr, opt);
      if (!cfg.freeze_encoder) enc_opt.step(res.encoder, enc_grads, lr, opt);
      epoch_loss += batch_loss / static_cast<double>(batch);
    }
    FinetuneRow row;
    row.epoch = epoch + 1;
    row.train_loss = epoch_loss / static_cast<double>(per_epoch);
    const EvalResult ev = evaluate(eval, res.encoder, res.head, cfg.frontend, geo);
    row.eval_accuracy = ev.accuracy;
    row.eval_map = ev.map;
    res.rows.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  return res;
}

inline std::vector<NamedArray> finetune_arrays(const ParamStore<float>& encoder, const ParamStore<float>& head) {
  std::vector<NamedArray> out;
  append_store(out, kContextPrefix, encoder);
  append_store(out, kHeadPrefix, head);
  return out;
}

}  // namespace ajepa
