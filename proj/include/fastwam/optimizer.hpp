#pragma once

#include <cstdint>
#include <vector>

#include "fastwam/param_store.hpp"

namespace fastwam {

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip_norm = 1.0;
  uint64_t total_steps = 5000;
};

struct AdamWState {
  std::vector<double> m;
  std::vector<double> v;
  uint64_t step = 0;  // completed steps

  void init(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    step = 0;
  }
};

// lr multiplier 0.5 * (1 + cos(pi * step / total)); 1 at step 0, 0 at the end.
double cosine_lr_multiplier(uint64_t step, uint64_t total_steps);

// Scales grads in place so the global L2 norm is at most max_norm;
// returns the pre-clip norm.
double clip_global_norm(std::vector<double>& grads, double max_norm);

// Global-norm clip followed by a bias-corrected AdamW update with
// decoupled weight decay; `step` is the 0-based step being applied.
// Throws NumericError naming the parameter on non-finite gradients.
double optimize_step(ParamStore& params, std::vector<double>& grads, AdamWState& state,
                     const AdamWConfig& cfg, uint64_t step);

}  // namespace fastwam
