#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "ajepa/error.hpp"
#include "ajepa/tensor.hpp"

namespace ajepa {

/// Paper scale: lr 2e-4, batch 512. Desk defaults below.
struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.05;
  std::int64_t warmup_steps = 100;
  std::int64_t total_steps = 2000;
  int batch_size = 16;

  void validate() const {
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (total_steps <= 0) throw ConfigError("total_steps must be positive");
    if (warmup_steps < 0 || warmup_steps >= total_steps) {
      throw ConfigError("warmup_steps must be in [0, total_steps)");
    }
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) {
      throw ConfigError("betas must be in [0, 1)");
    }
    if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be non-negative");
  }
};

/// Linear warmup from 0 to lr, then cosine decay to 0 at total_steps.
inline double lr_at(std::int64_t step, const OptimizerConfig& cfg) {
  if (step <= 0) return 0.0;
  if (step < cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (step >= cfg.total_steps) return 0.0;
  const double progress = static_cast<double>(step - cfg.warmup_steps) /
                          static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Adaptive-moment optimizer with decoupled weight decay. Single-row arrays
/// (biases, norm gains, the mask token) are not decayed.
template <typename T>
struct AdamW {
  ParamStore<T> m;
  ParamStore<T> v;
  std::int64_t updates = 0;

  AdamW() = default;
  explicit AdamW(const ParamStore<T>& like) : m(like.zeros_like()), v(like.zeros_like()) {}

  void step(ParamStore<T>& params, const ParamStore<T>& grads, double lr,
            const OptimizerConfig& cfg) {
    params.require_same_layout(grads, "AdamW::step");
    params.require_same_layout(m, "AdamW::step");
    ++updates;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(updates));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(updates));
    const T b1 = static_cast<T>(cfg.beta1);
    const T b2 = static_cast<T>(cfg.beta2);
    const T step_size = static_cast<T>(lr / bc1);
    const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const T eps = static_cast<T>(cfg.eps);
    auto g_it = grads.begin();
    auto m_it = m.begin();
    auto v_it = v.begin();
    for (auto& [name, p] : params) {
      const Mat<T>& g = g_it->second;
      Mat<T>& mm = m_it->second;
      Mat<T>& vv = v_it->second;
      mm = b1 * mm + (1 - b1) * g;
      vv = b2 * vv + ((1 - b2) * g.array().square()).matrix();
      if (p.rows() > 1 && cfg.weight_decay > 0) {
        p *= static_cast<T>(1.0 - lr * cfg.weight_decay);
      }
      p.array() -= step_size * mm.array() / (vv.array().sqrt() * inv_sqrt_bc2 + eps);
      ++g_it;
      ++m_it;
      ++v_it;
    }
  }
};

}  // namespace ajepa
