#include "fastwam/optimizer.hpp"

#include <cmath>

#include "fastwam/errors.hpp"

namespace fastwam {

double cosine_lr_multiplier(uint64_t step, uint64_t total_steps) {
  if (total_steps == 0) throw ConfigError("cosine_lr_multiplier: total_steps must be positive");
  if (step >= total_steps) return 0.0;
  const double x = static_cast<double>(step) / static_cast<double>(total_steps);
  return 0.5 * (1.0 + std::cos(3.14159265358979323846 * x));
}

double clip_global_norm(std::vector<double>& grads, double max_norm) {
  double sq = 0.0;
  for (double g : grads) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (double& g : grads) g *= scale;
  }
  return norm;
}

double optimize_step(ParamStore& params, std::vector<double>& grads, AdamWState& state,
                     const AdamWConfig& cfg, uint64_t step) {
  if (grads.size() != params.total_size()) {
    throw DimensionError("optimize_step: grad buffer size mismatch");
  }
  if (state.m.size() != grads.size() || state.v.size() != grads.size()) {
    throw ConfigError("optimize_step: optimizer state not initialized");
  }

  for (const auto& [path, e] : params.entries()) {
    const std::size_t off = params.offset_of(path);
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      if (!std::isfinite(grads[off + i])) {
        throw NumericError("optimize_step: non-finite gradient in " + path);
      }
    }
  }

  const double pre_clip = clip_global_norm(grads, cfg.grad_clip_norm);
  const double lr = cfg.lr * cosine_lr_multiplier(step, cfg.total_steps);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step + 1));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step + 1));

  // Parameters iterate lexicographically; the flat buffers share that order.
  std::size_t off = 0;
  for (auto& [path, e] : params.entries()) {
    for (std::size_t i = 0; i < e.value.size(); ++i, ++off) {
      double& m = state.m[off];
      double& v = state.v[off];
      const double g = grads[off];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      e.value[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * e.value[i]);
    }
  }
  state.step = step + 1;
  return pre_clip;
}

}  // namespace fastwam
