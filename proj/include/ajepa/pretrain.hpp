#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "ajepa/checkpoint.hpp"
#include "ajepa/dataset.hpp"
#include "ajepa/error.hpp"
#include "ajepa/maskgen.hpp"
#include "ajepa/model.hpp"
#include "ajepa/optim.hpp"
#include "ajepa/rng.hpp"
#include "ajepa/spectro.hpp"

namespace ajepa {

struct PretrainConfig {
  FrontendConfig frontend;
  SamplerConfig sampler;
  ModelConfig model;
  OptimizerConfig optim;
  CurriculumSchedule curriculum{2000, 0.01, ScheduleKind::sqrt};
  TargetNorm target_norm = TargetNorm::layernorm;
  // EMA momentum ramps linearly from ema_start to ema_end over total_steps.
  double ema_start = 0.996;
  double ema_end = 1.0;
  // Forces every plan to one mode; unset follows the curriculum.
  std::optional<MaskMode> forced_mode;

  GridShape grid() const { return {frontend.grid_rows(), frontend.grid_cols()}; }

  void validate() const {
    frontend.validate();
    sampler.validate();
    model.validate();
    optim.validate();
    curriculum.validate();
    if (model.patch_len != frontend.patch_len()) {
      throw ConfigError("patch_len must equal patch height * width");
    }
    if (curriculum.total_steps != optim.total_steps) {
      throw ConfigError("curriculum and optimizer total_steps differ");
    }
    if (!(ema_start >= 0 && ema_start <= 1 && ema_end >= 0 && ema_end <= 1)) {
      throw ConfigError("EMA momenta must be in [0, 1]");
    }
  }
};

inline double ema_momentum_at(std::int64_t step, const PretrainConfig& cfg) {
  const double t = std::min(1.0, static_cast<double>(step) /
                                     static_cast<double>(cfg.optim.total_steps));
  return cfg.ema_start + (cfg.ema_end - cfg.ema_start) * t;
}

/// Mean over masks of the mean squared difference over patches x dims.
template <typename T>
double jepa_loss(const std::vector<Mat<T>>& preds, const std::vector<Mat<T>>& targets) {
  if (preds.empty()) throw PreconditionError("jepa_loss: no target masks");
  if (preds.size() != targets.size()) throw ShapeError("jepa_loss: mask count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].rows() != targets[i].rows() || preds[i].cols() != targets[i].cols()) {
      throw ShapeError("jepa_loss: prediction/target shape mismatch");
    }
    if (preds[i].size() == 0) throw ShapeError("jepa_loss: empty mask");
    total += static_cast<double>((preds[i] - targets[i]).squaredNorm()) /
             static_cast<double>(preds[i].size());
  }
  return total / static_cast<double>(preds.size());
}

/// Loss of one sample and, when grad stores are given, its gradient scaled by
/// `weight` accumulated into them. The target encoder is evaluated once and
/// sliced per mask; no gradient store exists for it.
template <typename T>
double sample_loss_and_grads(const PatchGrid& grid, const MaskPlan& plan,
                             const ModelGeometry<T>& geo, const ParamStore<T>& context,
                             const ParamStore<T>& target, const ParamStore<T>& predictor,
                             TargetNorm norm, double weight,
                             std::type_identity_t<ParamStore<T>>* context_grads,
                             std::type_identity_t<ParamStore<T>>* predictor_grads) {
  const bool backward = context_grads && predictor_grads;
  EncoderCache<T> enc_cache;
  const TokenSequence<T> ctx = encode_context(grid, plan, geo, context, backward ? &enc_cache : nullptr);
  const TokenSequence<T> tgt = encode_target(grid, geo, target, norm);

  const auto n_masks = static_cast<double>(plan.targets.size());
  if (plan.targets.empty()) throw PreconditionError("mask plan has no targets");
  double loss = 0.0;
  Mat<T> d_ctx;
  if (backward) d_ctx = Mat<T>::Zero(ctx.features.rows(), ctx.features.cols());
  for (const MaskIndexSet& mask : plan.targets) {
    PredictorCache<T> pred_cache;
    const Mat<T> pred = predict_targets(ctx, mask, geo, predictor, backward ? &pred_cache : nullptr);
    const Mat<T> diff = pred - gather_rows(tgt.features, mask.indices);
    const double count = static_cast<double>(diff.size());
    loss += static_cast<double>(diff.squaredNorm()) / count / n_masks;
    if (backward) {
      const Mat<T> d_pred = diff * static_cast<T>(2.0 * weight / (count * n_masks));
      d_ctx += predictor_backward(geo, predictor, pred_cache, d_pred, *predictor_grads);
    }
  }
  if (backward) encoder_backward(geo, context, enc_cache, d_ctx, *context_grads);
  return loss;
}

struct TrainState {
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  ParamStore<float> context;
  ParamStore<float> target;
  ParamStore<float> predictor;
  AdamW<float> context_opt;
  AdamW<float> predictor_opt;

  friend bool operator==(const TrainState& a, const TrainState& b) {
    return a.step == b.step && a.seed == b.seed && a.context == b.context &&
           a.target == b.target && a.predictor == b.predictor &&
           a.context_opt.m == b.context_opt.m && a.context_opt.v == b.context_opt.v &&
           a.predictor_opt.m == b.predictor_opt.m && a.predictor_opt.v == b.predictor_opt.v &&
           a.context_opt.updates == b.context_opt.updates &&
           a.predictor_opt.updates == b.predictor_opt.updates;
  }
};

/// Fresh state: the target encoder starts as an exact copy of the context
/// encoder.
inline TrainState init_train_state(const PretrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  TrainState s;
  s.seed = seed;
  Rng rng = Rng::stream(seed, "init");
  s.context = init_encoder<float>(cfg.model, rng);
  s.predictor = init_predictor<float>(cfg.model, rng);
  s.target = s.context;
  s.context_opt = AdamW<float>(s.context);
  s.predictor_opt = AdamW<float>(s.predictor);
  return s;
}

struct StepResult {
  std::int64_t step = 0;  // steps completed after this update
  double loss = 0.0;
  double f_s = 0.0;
  double tf_fraction = 0.0;
  double lr = 0.0;
};

/// Mask plan for sample `index` of the batch at `step`.
inline MaskPlan plan_for(const PretrainConfig& cfg, std::uint64_t seed, std::int64_t step,
                         std::size_t index) {
  Rng rng = Rng::stream(seed, "masks", static_cast<std::uint64_t>(step), index);
  return build_mask_plan(cfg.grid(), cfg.sampler, step, cfg.curriculum, rng, cfg.forced_mode);
}

/// One optimizer step over a batch of patch grids: mask plans at the current
/// step, multi-mask loss, AdamW on context encoder and predictor at
/// lr_at(step), then the EMA update of the target encoder.
inline StepResult training_step(TrainState& state, const std::vector<PatchGrid>& batch,
                                const PretrainConfig& cfg, const ModelGeometry<float>& geo) {
  if (batch.empty()) throw PreconditionError("training_step: empty batch");
  ParamStore<float> context_grads = state.context.zeros_like();
  ParamStore<float> predictor_grads = state.predictor.zeros_like();
  const double weight = 1.0 / static_cast<double>(batch.size());
  StepResult r;
  int tf = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const MaskPlan plan = plan_for(cfg, state.seed, state.step, i);
    if (plan.mode == MaskMode::time_frequency) ++tf;
    r.loss += weight * sample_loss_and_grads(batch[i], plan, geo, state.context, state.target,
                                             state.predictor, cfg.target_norm, weight,
                                             &context_grads, &predictor_grads);
  }
  r.f_s = curriculum_f(state.step, cfg.curriculum);
  r.tf_fraction = static_cast<double>(tf) / static_cast<double>(batch.size());
  r.lr = lr_at(state.step, cfg.optim);
  state.context_opt.step(state.context, context_grads, r.lr, cfg.optim);
  state.predictor_opt.step(state.predictor, predictor_grads, r.lr, cfg.optim);
  ema_update(state.target, state.context, ema_momentum_at(state.step, cfg));
  ++state.step;
  r.step = state.step;
  return r;
}

/// Augmented patch grid for clip `clip_index` at `step`.
inline PatchGrid pretrain_view(const Clip& clip, const PretrainConfig& cfg, std::uint64_t seed,
                               std::int64_t step, std::size_t clip_index) {
  Rng rng = Rng::stream(seed, "augment", static_cast<std::uint64_t>(step), clip_index);
  return patchify(cyclic_crop_jitter(clip.frames, cfg.frontend, rng), cfg.frontend.patch);
}

/// Clip order for one epoch.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::int64_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::stream(seed, "data", static_cast<std::uint64_t>(epoch));
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

struct PretrainHooks {
  std::function<void(const StepResult&)> on_step;
  std::function<void(const TrainState&)> on_checkpoint;
  std::int64_t checkpoint_every = 0;
};

inline std::int64_t steps_per_epoch(std::size_t n_clips, int batch_size) {
  const auto full = static_cast<std::int64_t>(n_clips) / batch_size;
  return std::max<std::int64_t>(full, 1);
}

/// Runs from state.step for `epochs` epochs (unset: until total_steps),
/// never past total_steps. Epoch e visits clips in epoch_order(e) in
/// consecutive batches; an incomplete final batch is dropped unless the
/// dataset is smaller than one batch. Resuming from any saved state replays
/// the same sequence.
inline void pretrain_loop(TrainState& state, const Dataset& data, const PretrainConfig& cfg,
                          std::optional<std::int64_t> epochs, const PretrainHooks& hooks = {}) {
  cfg.validate();
  if (data.clips.empty()) throw PreconditionError("pretrain_loop: empty dataset");
  const ModelGeometry<float> geo(cfg.model, cfg.grid());
  const auto batch_size = static_cast<std::size_t>(
      std::min<std::size_t>(static_cast<std::size_t>(cfg.optim.batch_size), data.size()));
  const std::int64_t per_epoch = steps_per_epoch(data.size(), static_cast<int>(batch_size));
  std::int64_t end = cfg.optim.total_steps;
  if (epochs) {
    if (*epochs <= 0) return;
    end = std::min(end, (state.step / per_epoch + *epochs) * per_epoch);
  }
  std::int64_t cached_epoch = -1;
  std::vector<std::size_t> order;
  while (state.step < end) {
    const std::int64_t epoch = state.step / per_epoch;
    if (epoch != cached_epoch) {
      order = epoch_order(data.size(), state.seed, epoch);
      cached_epoch = epoch;
    }
    const auto offset = static_cast<std::size_t>(state.step % per_epoch) * batch_size;
    std::vector<PatchGrid> batch;
    batch.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
      const std::size_t clip = order[offset + i];
      batch.push_back(pretrain_view(data.clips[clip], cfg, state.seed, state.step, i));
    }
    const StepResult r = training_step(state, batch, cfg, geo);
    if (hooks.on_step) hooks.on_step(r);
    if (hooks.on_checkpoint && hooks.checkpoint_every > 0 &&
        state.step % hooks.checkpoint_every == 0) {
      hooks.on_checkpoint(state);
    }
  }
}

// Checkpoint array prefixes.
inline constexpr char kContextPrefix[] = "context/";
inline constexpr char kTargetPrefix[] = "target/";
inline constexpr char kPredictorPrefix[] = "predictor/";
inline constexpr char kHeadPrefix[] = "head/";

inline Mat<float> encode_u64(std::uint64_t v) {
  // Four exact 16-bit limbs; float32 represents every integer below 2^24.
  Mat<float> m(1, 4);
  for (int i = 0; i < 4; ++i) m(0, i) = static_cast<float>((v >> (16 * i)) & 0xFFFFu);
  return m;
}

inline std::uint64_t decode_u64(const Mat<float>& m) {
  if (m.size() != 4) throw CheckpointError("malformed integer field");
  std::uint64_t v = 0;
  for (int i = 0; i < 4; ++i) {
    const float limb = m(0, i);
    if (!(limb >= 0 && limb <= 65535.0f) || limb != std::floor(limb)) {
      throw CheckpointError("malformed integer field");
    }
    v |= static_cast<std::uint64_t>(limb) << (16 * i);
  }
  return v;
}

inline std::vector<NamedArray> train_state_arrays(const TrainState& s) {
  std::vector<NamedArray> out;
  out.push_back({"meta/step", encode_u64(static_cast<std::uint64_t>(s.step))});
  out.push_back({"meta/seed", encode_u64(s.seed)});
  out.push_back({"meta/context_updates", encode_u64(static_cast<std::uint64_t>(s.context_opt.updates))});
  out.push_back({"meta/predictor_updates", encode_u64(static_cast<std::uint64_t>(s.predictor_opt.updates))});
  append_store(out, kContextPrefix, s.context);
  append_store(out, kTargetPrefix, s.target);
  append_store(out, kPredictorPrefix, s.predictor);
  append_store(out, "adam_m/context/", s.context_opt.m);
  append_store(out, "adam_v/context/", s.context_opt.v);
  append_store(out, "adam_m/predictor/", s.predictor_opt.m);
  append_store(out, "adam_v/predictor/", s.predictor_opt.v);
  return out;
}

inline const Mat<float>& find_array(const std::vector<NamedArray>& arrays, const std::string& name) {
  for (const auto& a : arrays) {
    if (a.name == name) return a.values;
  }
  throw CheckpointError("checkpoint is missing '" + name + "'");
}

/// Rebuilds a full training state; every array is validated against the
/// layout implied by `model`.
inline TrainState train_state_from_arrays(const std::vector<NamedArray>& arrays,
                                          const ModelConfig& model) {
  TrainState s;
  s.step = static_cast<std::int64_t>(decode_u64(find_array(arrays, "meta/step")));
  s.seed = decode_u64(find_array(arrays, "meta/seed"));
  Rng layout_rng(0);
  s.context = init_encoder<float>(model, layout_rng);
  s.predictor = init_predictor<float>(model, layout_rng);
  s.target = s.context;
  s.context_opt = AdamW<float>(s.context);
  s.predictor_opt = AdamW<float>(s.predictor);
  load_store(arrays, kContextPrefix, s.context);
  load_store(arrays, kTargetPrefix, s.target);
  load_store(arrays, kPredictorPrefix, s.predictor);
  load_store(arrays, "adam_m/context/", s.context_opt.m);
  load_store(arrays, "adam_v/context/", s.context_opt.v);
  load_store(arrays, "adam_m/predictor/", s.predictor_opt.m);
  load_store(arrays, "adam_v/predictor/", s.predictor_opt.v);
  s.context_opt.updates =
      static_cast<std::int64_t>(decode_u64(find_array(arrays, "meta/context_updates")));
  s.predictor_opt.updates =
      static_cast<std::int64_t>(decode_u64(find_array(arrays, "meta/predictor_updates")));
  return s;
}

inline void save_train_state(const std::filesystem::path& path, const TrainState& s) {
  write_checkpoint(path, train_state_arrays(s));
}

inline TrainState load_train_state(const std::filesystem::path& path, const ModelConfig& model) {
  return train_state_from_arrays(read_checkpoint(path), model);
}

}  // namespace ajepa
