#pragma once

#include <functional>
#include <vector>

#include "fastwam/rng.hpp"
#include "fastwam/tensor.hpp"

namespace fastwam {

// One interpolation sample: y_t = (1-t) y + t eps, target velocity eps - y.
struct FlowSample {
  std::vector<double> y;
  std::vector<double> eps;
  std::vector<double> y_t;
  std::vector<double> target_v;
  double t = 0.0;
};

// t = sigmoid(n), n ~ Normal(m, s^2); strictly inside (0,1).
double sample_t_logitnormal(Pcg32& rng, double m = 0.0, double s = 1.0);

FlowSample make_flow_sample(const std::vector<double>& y, Pcg32& rng, double t);

// Flow-matching MSE over valid elements (see mse_masked).
Tensor fm_loss(const Tensor& pred_v, const std::vector<double>& target_v,
               const std::vector<uint8_t>* valid = nullptr);

// L = L_act + lambda * L_vid.
Tensor joint_loss(const Tensor& l_act, const Tensor& l_vid, double lambda);

struct SamplerConfig {
  int n_steps = 10;
  double cfg_scale = 1.0;
  std::vector<double> t_schedule;  // strictly decreasing, 1.0 -> 0.0
  uint64_t rng_seed = 0;

  // Uniform grid 1.0, (n-1)/n, ..., 0.0.
  static SamplerConfig uniform(int n_steps, double cfg_scale = 1.0, uint64_t rng_seed = 0);
  void validate() const;
};

using VelocityFn = std::function<std::vector<double>(const std::vector<double>& y, double t)>;

// Euler integration of dy/dt = v from t=1 (noise) to t=0:
// y <- y - (t_k - t_{k+1}) * v(y, t_k). Throws NumericError (with step
// index) on non-finite intermediates.
std::vector<double> euler_sample(std::vector<double> init_noise, const VelocityFn& velocity_fn,
                                 const SamplerConfig& cfg);

// v_uncond + scale * (v_cond - v_uncond); at scale 1 bit-identical to v_cond.
std::vector<double> cfg_combine(const std::vector<double>& v_cond,
                                const std::vector<double>& v_uncond, double scale);

}  // namespace fastwam
