#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "ajepa/error.hpp"
#include "ajepa/finetune.hpp"
#include "ajepa/pretrain.hpp"

namespace ajepa {

/// Everything a run can be configured with. The frontend and model sections
/// are shared by pretraining and fine-tuning.
struct RunConfig {
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  // A frozen encoder only trains the head, which needs a longer, hotter run.
  int probe_epochs = 40;
  double probe_lr = 1e-2;

  RunConfig() { pretrain.curriculum.total_steps = pretrain.optim.total_steps; }

  /// Copies the shared sections into the fine-tuning config.
  FinetuneConfig finetune_config() const {
    FinetuneConfig f = finetune;
    f.frontend = pretrain.frontend;
    f.model = pretrain.model;
    return f;
  }

  void validate() const {
    pretrain.validate();
    finetune_config().validate();
    if (probe_epochs < 0 || !(probe_lr > 0)) throw ConfigError("probe_epochs/probe_lr out of range");
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  v = trim(v);
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError("bad value for '" + std::string(key) + "': '" + std::string(v) + "'");
  }
  return out;
}

inline bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean for '" + std::string(key) + "': '" + std::string(v) + "'");
}

// "lo, hi"
inline Range parse_range(std::string_view key, std::string_view v) {
  const auto comma = v.find(',');
  if (comma == std::string_view::npos) {
    throw ConfigError("'" + std::string(key) + "' expects 'lo, hi'");
  }
  return {parse_number<double>(key, v.substr(0, comma)), parse_number<double>(key, v.substr(comma + 1))};
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define AJEPA_NUM_FIELD(key, type, expr)                                                       \
  {key, Field{[](RunConfig& c, std::string_view v) { c.expr = parse_number<type>(key, v); }, \
              [](const RunConfig& c) { return format_double(static_cast<double>(c.expr)); }}}
#define AJEPA_INT_FIELD(key, type, expr)                                                       \
  {key, Field{[](RunConfig& c, std::string_view v) { c.expr = parse_number<type>(key, v); }, \
              [](const RunConfig& c) { return std::to_string(c.expr); }}}
#define AJEPA_RANGE_FIELD(key, expr)                                                  \
  {key, Field{[](RunConfig& c, std::string_view v) { c.expr = parse_range(key, v); }, \
              [](const RunConfig& c) {                                                \
                return format_double(c.expr.lo) + ", " + format_double(c.expr.hi);    \
              }}}
#define AJEPA_BOOL_FIELD(key, expr)                                                  \
  {key, Field{[](RunConfig& c, std::string_view v) { c.expr = parse_bool(key, v); }, \
              [](const RunConfig& c) { return std::string(c.expr ? "true" : "false"); }}}

inline const std::map<std::string, Field, std::less<>>& fields() {
  static const std::map<std::string, Field, std::less<>> table = {
      AJEPA_INT_FIELD("n_mels", int, pretrain.frontend.n_mels),
      AJEPA_NUM_FIELD("win_ms", double, pretrain.frontend.win_ms),
      AJEPA_NUM_FIELD("hop_ms", double, pretrain.frontend.hop_ms),
      AJEPA_INT_FIELD("fft_size", int, pretrain.frontend.fft_size),
      AJEPA_INT_FIELD("target_frames", int, pretrain.frontend.target_frames),
      AJEPA_INT_FIELD("patch_height", int, pretrain.frontend.patch.height),
      AJEPA_INT_FIELD("patch_width", int, pretrain.frontend.patch.width),
      AJEPA_NUM_FIELD("jitter_db", double, pretrain.frontend.jitter_db),
      AJEPA_NUM_FIELD("log_floor", double, pretrain.frontend.log_floor),
      AJEPA_NUM_FIELD("low_freq_hz", double, pretrain.frontend.low_freq_hz),
      AJEPA_NUM_FIELD("high_freq_hz", double, pretrain.frontend.high_freq_hz),

      AJEPA_INT_FIELD("n_targets_block", int, pretrain.sampler.n_targets_block),
      AJEPA_RANGE_FIELD("block_scale", pretrain.sampler.block_scale),
      AJEPA_RANGE_FIELD("block_aspect", pretrain.sampler.block_aspect),
      AJEPA_INT_FIELD("n_targets_tf", int, pretrain.sampler.n_targets_tf),
      AJEPA_RANGE_FIELD("tf_scale", pretrain.sampler.tf_scale),
      AJEPA_RANGE_FIELD("tf_aspect", pretrain.sampler.tf_aspect),
      AJEPA_RANGE_FIELD("context_scale", pretrain.sampler.context_scale),
      AJEPA_NUM_FIELD("context_aspect", double, pretrain.sampler.context_aspect),
      AJEPA_NUM_FIELD("min_ratio", double, pretrain.sampler.min_ratio),
      AJEPA_INT_FIELD("max_tries", int, pretrain.sampler.max_tries),
      AJEPA_INT_FIELD("max_plan_retries", int, pretrain.sampler.max_plan_retries),

      AJEPA_INT_FIELD("embed_dim", int, pretrain.model.embed_dim),
      AJEPA_INT_FIELD("enc_depth", int, pretrain.model.enc_depth),
      AJEPA_INT_FIELD("n_heads", int, pretrain.model.n_heads),
      AJEPA_INT_FIELD("pred_depth", int, pretrain.model.pred_depth),
      AJEPA_INT_FIELD("pred_dim", int, pretrain.model.pred_dim),
      AJEPA_NUM_FIELD("mlp_ratio", double, pretrain.model.mlp_ratio),
      AJEPA_INT_FIELD("patch_len", int, pretrain.model.patch_len),
      AJEPA_NUM_FIELD("init_std", double, pretrain.model.init_std),

      AJEPA_NUM_FIELD("lr", double, pretrain.optim.lr),
      AJEPA_NUM_FIELD("beta1", double, pretrain.optim.beta1),
      AJEPA_NUM_FIELD("beta2", double, pretrain.optim.beta2),
      AJEPA_NUM_FIELD("eps", double, pretrain.optim.eps),
      AJEPA_NUM_FIELD("weight_decay", double, pretrain.optim.weight_decay),
      AJEPA_INT_FIELD("warmup_steps", std::int64_t, pretrain.optim.warmup_steps),
      AJEPA_INT_FIELD("batch_size", int, pretrain.optim.batch_size),
      {"total_steps", Field{[](RunConfig& c, std::string_view v) {
                              const auto s = parse_number<std::int64_t>("total_steps", v);
                              c.pretrain.optim.total_steps = s;
                              c.pretrain.curriculum.total_steps = s;
                            },
                            [](const RunConfig& c) { return std::to_string(c.pretrain.optim.total_steps); }}},

      AJEPA_NUM_FIELD("curriculum_c0", double, pretrain.curriculum.c0),
      {"curriculum_kind", Field{[](RunConfig& c, std::string_view v) { c.pretrain.curriculum.kind = parse_schedule_kind(v); },
                                [](const RunConfig& c) { return std::string(to_string(c.pretrain.curriculum.kind)); }}},
      {"mask_mode", Field{[](RunConfig& c, std::string_view v) {
                            if (v == "auto") c.pretrain.forced_mode.reset();
                            else if (v == "block") c.pretrain.forced_mode = MaskMode::block;
                            else if (v == "tf") c.pretrain.forced_mode = MaskMode::time_frequency;
                            else throw ConfigError("mask_mode must be auto, block or tf");
                          },
                          [](const RunConfig& c) {
                            return c.pretrain.forced_mode ? std::string(to_string(*c.pretrain.forced_mode)) : "auto";
                          }}},
      {"target_norm", Field{[](RunConfig& c, std::string_view v) {
                              if (v == "layernorm") c.pretrain.target_norm = TargetNorm::layernorm;
                              else if (v == "none") c.pretrain.target_norm = TargetNorm::none;
                              else throw ConfigError("target_norm must be layernorm or none");
                            },
                            [](const RunConfig& c) {
                              return std::string(c.pretrain.target_norm == TargetNorm::layernorm ? "layernorm" : "none");
                            }}},
      AJEPA_NUM_FIELD("ema_start", double, pretrain.ema_start),
      AJEPA_NUM_FIELD("ema_end", double, pretrain.ema_end),

      AJEPA_INT_FIELD("ft_epochs", int, finetune.epochs),
      AJEPA_INT_FIELD("ft_batch_size", int, finetune.batch_size),
      AJEPA_NUM_FIELD("ft_lr", double, finetune.lr),
      AJEPA_NUM_FIELD("ft_weight_decay", double, finetune.weight_decay),
      AJEPA_INT_FIELD("ft_warmup_steps", std::int64_t, finetune.warmup_steps),
      AJEPA_NUM_FIELD("rm_ratio", double, finetune.rm.ratio),
      AJEPA_BOOL_FIELD("rm_per_layer", finetune.rm.per_layer),
      AJEPA_NUM_FIELD("head_init_std", double, finetune.head_init_std),
      AJEPA_INT_FIELD("probe_epochs", int, probe_epochs),
      AJEPA_NUM_FIELD("probe_lr", double, probe_lr),
  };
  return table;
}

#undef AJEPA_NUM_FIELD
#undef AJEPA_INT_FIELD
#undef AJEPA_RANGE_FIELD
#undef AJEPA_BOOL_FIELD

}  // namespace detail

/// Applies `key = value` lines on top of `base`. Blank lines and lines
/// starting with '#' are ignored; unknown or repeated keys are errors.
inline RunConfig parse_config(std::string_view text, RunConfig base = {}) {
  std::map<std::string, int, std::less<>> seen;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::string_view line = detail::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(line_no);
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string_view key = detail::trim(line.substr(0, eq));
    const std::string_view value = detail::trim(line.substr(eq + 1));
    const auto it = detail::fields().find(key);
    if (it == detail::fields().end()) throw ConfigError(where + ": unknown key '" + std::string(key) + "'");
    if (!seen.emplace(std::string(key), line_no).second) {
      throw ConfigError(where + ": duplicate key '" + std::string(key) + "'");
    }
    try {
      it->second.set(base, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  base.validate();
  return base;
}

/// Every field, one `key = value` line each, in key order. Round-trips
/// through parse_config.
inline std::string format_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : detail::fields()) out += key + " = " + field.get(cfg) + "\n";
  return out;
}

inline RunConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace ajepa
