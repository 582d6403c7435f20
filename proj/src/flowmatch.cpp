#include "fastwam/flowmatch.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "fastwam/errors.hpp"

namespace fastwam {

double sample_t_logitnormal(Pcg32& rng, double m, double s) {
  if (s <= 0.0) throw ConfigError("sample_t_logitnormal: s must be positive");
  const double n = m + s * rng.normal();
  double t = 1.0 / (1.0 + std::exp(-n));
  // sigmoid saturates in double for |n| > ~37; nudge back inside (0,1)
  if (t <= 0.0) t = std::numeric_limits<double>::min();
  if (t >= 1.0) t = 1.0 - 1e-16;
  return t;
}

FlowSample make_flow_sample(const std::vector<double>& y, Pcg32& rng, double t) {
  if (t <= 0.0 || t >= 1.0) throw ConfigError("make_flow_sample: t must lie in (0,1)");
  FlowSample s;
  s.t = t;
  s.y = y;
  s.eps.resize(y.size());
  s.y_t.resize(y.size());
  s.target_v.resize(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = rng.normal();
    s.eps[i] = e;
    s.y_t[i] = (1.0 - t) * y[i] + t * e;
    s.target_v[i] = e - y[i];
  }
  return s;
}

Tensor fm_loss(const Tensor& pred_v, const std::vector<double>& target_v,
               const std::vector<uint8_t>* valid) {
  return mse_masked(pred_v, target_v, valid);
}

Tensor joint_loss(const Tensor& l_act, const Tensor& l_vid, double lambda) {
  if (!std::isfinite(lambda) || lambda < 0.0) {
    throw ConfigError("joint_loss: lambda must be finite and non-negative");
  }
  if (!std::isfinite(l_act.scalar_value()) || !std::isfinite(l_vid.scalar_value())) {
    throw NumericError("joint_loss: non-finite loss input");
  }
  return add(l_act, scale(l_vid, lambda));
}

SamplerConfig SamplerConfig::uniform(int n_steps, double cfg_scale, uint64_t rng_seed) {
  SamplerConfig cfg;
  cfg.n_steps = n_steps;
  cfg.cfg_scale = cfg_scale;
  cfg.rng_seed = rng_seed;
  cfg.t_schedule.resize(n_steps + 1);
  for (int k = 0; k <= n_steps; ++k) {
    cfg.t_schedule[k] = static_cast<double>(n_steps - k) / n_steps;
  }
  cfg.validate();
  return cfg;
}

void SamplerConfig::validate() const {
  if (n_steps < 1) throw ConfigError("SamplerConfig: n_steps must be >= 1");
  if (t_schedule.size() != static_cast<std::size_t>(n_steps) + 1) {
    throw ConfigError("SamplerConfig: schedule must have n_steps + 1 points");
  }
  if (t_schedule.front() != 1.0 || t_schedule.back() != 0.0) {
    throw ConfigError("SamplerConfig: schedule must start at 1.0 and end at 0.0");
  }
  for (std::size_t i = 1; i < t_schedule.size(); ++i) {
    if (!(t_schedule[i] < t_schedule[i - 1])) {
      throw ConfigError("SamplerConfig: schedule must be strictly decreasing");
    }
  }
}

std::vector<double> euler_sample(std::vector<double> y, const VelocityFn& velocity_fn,
                                 const SamplerConfig& cfg) {
  cfg.validate();
  for (int k = 0; k < cfg.n_steps; ++k) {
    const double t_k = cfg.t_schedule[k];
    const double dt = t_k - cfg.t_schedule[k + 1];
    std::vector<double> v = velocity_fn(y, t_k);
    if (v.size() != y.size()) {
      throw DimensionError("euler_sample: velocity size " + std::to_string(v.size()) +
                           " does not match state size " + std::to_string(y.size()));
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
      y[i] -= dt * v[i];
      if (!std::isfinite(y[i])) {
        throw NumericError("euler_sample: non-finite state at step " + std::to_string(k));
      }
    }
  }
  return y;
}

std::vector<double> cfg_combine(const std::vector<double>& v_cond,
                                const std::vector<double>& v_uncond, double scale) {
  if (v_cond.size() != v_uncond.size()) {
    throw DimensionError("cfg_combine: size mismatch " + std::to_string(v_cond.size()) + " vs " +
                         std::to_string(v_uncond.size()));
  }
  if (scale == 1.0) return v_cond;  // bit-identical at the paper's operating point
  std::vector<double> out(v_cond.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = v_uncond[i] + scale * (v_cond[i] - v_uncond[i]);
  }
  return out;
}

}  // namespace fastwam
