#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ajepa/error.hpp"
#include "ajepa/rng.hpp"
#include "ajepa/spectro.hpp"

namespace ajepa {

/// Sorted unique patch indices (raster order) on a grid.
struct MaskIndexSet {
  std::vector<int> indices;
  GridShape grid;

  std::size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
  bool contains(int index) const {
    return std::binary_search(indices.begin(), indices.end(), index);
  }

  friend bool operator==(const MaskIndexSet&, const MaskIndexSet&) = default;
};

/// 0/1 cell map over a grid in raster order; 1 marks an acceptable cell.
using Raster = std::vector<std::uint8_t>;

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct SamplerConfig {
  int n_targets_block = 4;
  Range block_scale{0.15, 0.20};
  Range block_aspect{0.75, 1.5};
  int n_targets_tf = 3;
  Range tf_scale{0.05, 0.075};
  Range tf_aspect{0.75, 1.5};
  Range context_scale{0.85, 1.0};
  double context_aspect = 1.0;
  double min_ratio = 0.35;
  int max_tries = 20;
  int max_plan_retries = 40;

  void validate() const {
    auto check = [](Range r, const char* name, bool unit) {
      if (!(r.lo <= r.hi) || !(r.lo > 0) || (unit && r.hi > 1.0)) {
        throw ConfigError(std::string("invalid range for ") + name);
      }
    };
    check(block_scale, "block_scale", true);
    check(block_aspect, "block_aspect", false);
    check(tf_scale, "tf_scale", true);
    check(tf_aspect, "tf_aspect", false);
    check(context_scale, "context_scale", true);
    if (!(context_aspect > 0)) throw ConfigError("context_aspect must be positive");
    if (n_targets_block < 1 || n_targets_tf < 1) {
      throw ConfigError("target counts must be at least 1");
    }
    if (!(min_ratio >= 0 && min_ratio < 1)) throw ConfigError("min_ratio must be in [0, 1)");
    if (max_tries < 1 || max_plan_retries < 1) throw ConfigError("try budgets must be >= 1");
  }
};

enum class ScheduleKind { sqrt, linear, step, constant, reversed };

inline std::string_view to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::sqrt: return "sqrt";
    case ScheduleKind::linear: return "linear";
    case ScheduleKind::step: return "step";
    case ScheduleKind::constant: return "constant";
    case ScheduleKind::reversed: return "reversed";
  }
  return "?";
}

inline ScheduleKind parse_schedule_kind(std::string_view s) {
  for (auto k : {ScheduleKind::sqrt, ScheduleKind::linear, ScheduleKind::step,
                 ScheduleKind::constant, ScheduleKind::reversed}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown curriculum kind '" + std::string(s) + "'");
}

struct CurriculumSchedule {
  std::int64_t total_steps = 1;
  double c0 = 0.01;
  ScheduleKind kind = ScheduleKind::sqrt;

  void validate() const {
    if (total_steps <= 0) throw ConfigError("total_steps must be positive");
    if (!(c0 > 0 && c0 < 1)) throw ConfigError("c0 must be in (0, 1)");
  }
};

/// Probability of time-frequency masking at step s.
///   sqrt:     min(1, sqrt(s (1 - c0^2) / S) + c0^2)
///   linear:   min(1, s (1 - c0^2) / S + c0^2)
///   step:     c0^2 before S/2, 1 from S/2 on
///   constant: c0^2 throughout (plain block masking)
///   reversed: 1 - sqrt-schedule
inline double curriculum_f(std::int64_t step, const CurriculumSchedule& sched) {
  const double c2 = sched.c0 * sched.c0;
  const double s = static_cast<double>(std::max<std::int64_t>(step, 0));
  const double total = static_cast<double>(sched.total_steps);
  const double sqrt_f = std::min(1.0, std::sqrt(s * (1.0 - c2) / total) + c2);
  switch (sched.kind) {
    case ScheduleKind::sqrt: return sqrt_f;
    case ScheduleKind::linear: return std::min(1.0, s * (1.0 - c2) / total + c2);
    case ScheduleKind::step: return 2 * step >= sched.total_steps ? 1.0 : c2;
    case ScheduleKind::constant: return c2;
    case ScheduleKind::reversed: return 1.0 - sqrt_f;
  }
  return sqrt_f;
}

enum class MaskMode { block, time_frequency };

inline std::string_view to_string(MaskMode m) {
  return m == MaskMode::block ? "block" : "tf";
}

inline MaskMode choose_mode(std::int64_t step, const CurriculumSchedule& sched, Rng& rng) {
  return rng.uniform() < curriculum_f(step, sched) ? MaskMode::time_frequency
                                                    : MaskMode::block;
}

struct BlockSize {
  int h = 0;
  int w = 0;
  friend bool operator==(const BlockSize&, const BlockSize&) = default;
};

/// Rounds half up, then clamps to [1, axis - 1].
inline int clamp_block_side(double side, int axis) {
  const int rounded = static_cast<int>(std::floor(side + 0.5));
  return std::clamp(rounded, 1, axis - 1);
}

/// Block whose area is `scale` of the grid and whose h/w ratio is `aspect`.
inline BlockSize block_size_for(GridShape grid, double scale, double aspect) {
  if (grid.rows < 2 || grid.cols < 2) {
    throw ConfigError("mask grid must be at least 2x2");
  }
  const double area = scale * grid.rows * grid.cols;
  return {clamp_block_side(std::sqrt(area * aspect), grid.rows),
          clamp_block_side(std::sqrt(area / aspect), grid.cols)};
}

inline BlockSize sample_block_size(GridShape grid, Range scale, Range aspect, Rng& rng) {
  if (grid.rows < 2 || grid.cols < 2) {
    throw ConfigError("mask grid must be at least 2x2");
  }
  const double s = rng.uniform(scale.lo, scale.hi);
  const double a = rng.uniform(aspect.lo, aspect.hi);
  return block_size_for(grid, s, a);
}

struct BlockPlacement {
  int top = 0;
  int left = 0;
  BlockSize size;
};

/// Outcome of one rejection-sampled block.
struct BlockSample {
  MaskIndexSet mask;       // block cells that survived the acceptable regions
  Raster complement;       // 0 on the block, 1 elsewhere
  Raster complement_tf;    // 0 on every row and column the block touches
  BlockPlacement placement;
  int regions_applied = 0; // leading acceptable regions honored (< size when relaxed)
};

inline Raster block_complement(GridShape grid, const BlockPlacement& b) {
  Raster r(static_cast<std::size_t>(grid.size()), 1);
  for (int i = b.top; i < b.top + b.size.h; ++i) {
    for (int j = b.left; j < b.left + b.size.w; ++j) r[i * grid.cols + j] = 0;
  }
  return r;
}

inline Raster cross_complement(GridShape grid, const BlockPlacement& b) {
  Raster r(static_cast<std::size_t>(grid.size()), 1);
  for (int i = 0; i < grid.rows; ++i) {
    for (int j = 0; j < grid.cols; ++j) {
      const bool in_rows = i >= b.top && i < b.top + b.size.h;
      const bool in_cols = j >= b.left && j < b.left + b.size.w;
      if (in_rows || in_cols) r[i * grid.cols + j] = 0;
    }
  }
  return r;
}

struct BlockSamplerOptions {
  double min_ratio = 0.35;
  int max_tries = 20;
  // Drop trailing acceptable regions one at a time after each run of
  // max_tries failures, down to `keep_regions` regions.
  bool allow_relax = true;
  int keep_regions = 0;
};

/// Rejection sampler: uniform top-left, restrict to the leading acceptable
/// regions, accept when more than min_ratio * h * w cells survive.
inline BlockSample sample_block_mask(BlockSize size, GridShape grid,
                                     std::span<const Raster> acceptable,
                                     const BlockSamplerOptions& opt, Rng& rng) {
  if (size.h < 1 || size.w < 1 || size.h >= grid.rows || size.w >= grid.cols) {
    throw PreconditionError("block " + shape_string(size.h, size.w) +
                            " does not fit strictly inside grid " +
                            shape_string(grid.rows, grid.cols));
  }
  for (const auto& r : acceptable) {
    if (r.size() != static_cast<std::size_t>(grid.size())) {
      throw ShapeError("acceptable region raster does not match grid");
    }
  }
  const int n_regions = static_cast<int>(acceptable.size());
  const int max_relax =
      opt.allow_relax ? std::max(n_regions - std::max(opt.keep_regions, 0), 0) : 0;
  const double threshold = opt.min_ratio * size.h * size.w;

  for (int relax = 0; relax <= max_relax; ++relax) {
    const int applied = n_regions - relax;
    for (int attempt = 0; attempt < opt.max_tries; ++attempt) {
      BlockPlacement p{static_cast<int>(rng.uniform_int(0, grid.rows - size.h)),
                       static_cast<int>(rng.uniform_int(0, grid.cols - size.w)), size};
      MaskIndexSet mask{{}, grid};
      for (int i = p.top; i < p.top + size.h; ++i) {
        for (int j = p.left; j < p.left + size.w; ++j) {
          const int idx = i * grid.cols + j;
          bool ok = true;
          for (int k = 0; k < applied && ok; ++k) ok = acceptable[k][idx] != 0;
          if (ok) mask.indices.push_back(idx);
        }
      }
      if (static_cast<double>(mask.size()) > threshold) {
        BlockSample out;
        out.mask = std::move(mask);
        out.complement = block_complement(grid, p);
        out.complement_tf = cross_complement(grid, p);
        out.placement = p;
        out.regions_applied = applied;
        return out;
      }
    }
  }
  throw SamplingFailure("no acceptable " + shape_string(size.h, size.w) +
                        " block after " + std::to_string(opt.max_tries) +
                        " tries per relaxation level");
}

/// Same placement rule as sample_block_mask; the complement to use for the
/// context is the cross-shaped `complement_tf`.
inline BlockSample sample_tf_mask(BlockSize size, GridShape grid,
                                  std::span<const Raster> acceptable,
                                  const BlockSamplerOptions& opt, Rng& rng) {
  return sample_block_mask(size, grid, acceptable, opt, rng);
}

/// Context block of the given size restricted to the target complements.
inline BlockSample sample_context_mask(BlockSize size, GridShape grid,
                                       std::span<const Raster> acceptable,
                                       const SamplerConfig& cfg, Rng& rng) {
  // At least one target must keep its exclusion region.
  return sample_block_mask(size, grid, acceptable,
                           {cfg.min_ratio, cfg.max_tries, true, 1}, rng);
}

struct MaskPlan {
  MaskIndexSet context;
  std::vector<MaskIndexSet> targets;
  std::vector<BlockPlacement> target_blocks;
  BlockPlacement context_block;
  MaskMode mode = MaskMode::block;

  friend bool operator==(const MaskPlan& a, const MaskPlan& b) {
    auto same = [](const BlockPlacement& x, const BlockPlacement& y) {
      return x.top == y.top && x.left == y.left && x.size == y.size;
    };
    if (!(a.context == b.context && a.targets == b.targets && a.mode == b.mode &&
          same(a.context_block, b.context_block) &&
          a.target_blocks.size() == b.target_blocks.size())) {
      return false;
    }
    for (std::size_t i = 0; i < a.target_blocks.size(); ++i) {
      if (!same(a.target_blocks[i], b.target_blocks[i])) return false;
    }
    return true;
  }
};

namespace detail {

inline MaskPlan try_build_plan(GridShape grid, const SamplerConfig& cfg, MaskMode mode,
                               Rng& rng) {
  const bool tf = mode == MaskMode::time_frequency;
  const BlockSize context_size =
      sample_block_size(grid, cfg.context_scale, {cfg.context_aspect, cfg.context_aspect}, rng);
  const BlockSize target_size = tf ? sample_block_size(grid, cfg.tf_scale, cfg.tf_aspect, rng)
                                   : sample_block_size(grid, cfg.block_scale, cfg.block_aspect, rng);
  const int n_targets = tf ? cfg.n_targets_tf : cfg.n_targets_block;

  MaskPlan plan;
  plan.mode = mode;
  std::vector<Raster> acceptable;
  const BlockSamplerOptions target_opt{cfg.min_ratio, cfg.max_tries, true, 0};
  for (int i = 0; i < n_targets; ++i) {
    BlockSample t = tf ? sample_tf_mask(target_size, grid, {}, target_opt, rng)
                       : sample_block_mask(target_size, grid, {}, target_opt, rng);
    acceptable.push_back(tf ? std::move(t.complement_tf) : std::move(t.complement));
    plan.targets.push_back(std::move(t.mask));
    plan.target_blocks.push_back(t.placement);
  }
  BlockSample ctx = sample_context_mask(context_size, grid, acceptable, cfg, rng);
  // Targets whose exclusion region had to be relaxed away are dropped so that
  // the context stays disjoint from every target that remains.
  plan.targets.resize(static_cast<std::size_t>(ctx.regions_applied));
  plan.target_blocks.resize(static_cast<std::size_t>(ctx.regions_applied));
  plan.context = std::move(ctx.mask);
  plan.context_block = ctx.placement;
  return plan;
}

}  // namespace detail

/// Builds one context mask and its target masks. `forced` overrides the
/// curriculum draw. Failed plans are rebuilt from fresh draws up to
/// cfg.max_plan_retries times.
inline MaskPlan build_mask_plan(GridShape grid, const SamplerConfig& cfg, std::int64_t step,
                                const CurriculumSchedule& sched, Rng& rng,
                                std::optional<MaskMode> forced = std::nullopt) {
  cfg.validate();
  sched.validate();
  if (grid.rows < 2 || grid.cols < 2) throw ConfigError("mask grid must be at least 2x2");
  const MaskMode mode = forced ? *forced : choose_mode(step, sched, rng);
  for (int attempt = 0; attempt < cfg.max_plan_retries; ++attempt) {
    try {
      return detail::try_build_plan(grid, cfg, mode, rng);
    } catch (const SamplingFailure&) {
    }
  }
  throw UnsatisfiableConfigError("no mask plan after " +
                                 std::to_string(cfg.max_plan_retries) + " retries on grid " +
                                 shape_string(grid.rows, grid.cols));
}

/// Target cells are 2, context cells 1, everything else 0.
inline std::vector<std::uint8_t> plan_labels(const MaskPlan& plan) {
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(plan.context.grid.size()), 0);
  for (int i : plan.context.indices) labels[i] = 1;
  for (const auto& t : plan.targets) {
    for (int i : t.indices) labels[i] = 2;
  }
  return labels;
}

}  // namespace ajepa
