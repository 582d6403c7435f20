#pragma once

#include <string>
#include <vector>

#include "fastwam/flowmatch.hpp"
#include "fastwam/model.hpp"
#include "fastwam/tokenize.hpp"

namespace fastwam {

enum class VariantKind { FastWam, Joint, Idm, NoCoTrain };

VariantKind variant_from_string(const std::string& s);
std::string to_string(VariantKind kind);

struct VariantConfig {
  VariantKind kind = VariantKind::FastWam;
  double lambda = 1.0;  // 0 iff NoCoTrain
  double idm_noise_aug_prob = 0.5;
  double idm_aug_t_max = 0.5;
  int n_steps_action = 10;
  int n_steps_video = 10;
  double cfg_scale = 1.0;
  double cfg_dropout_prob = 0.1;
  double t_mean = 0.0;  // logit-normal schedule parameters
  double t_std = 1.0;

  void validate() const;
  static VariantConfig for_kind(VariantKind kind);
};

// Per-sample randomness, drawn up-front in sample order so batch workers
// stay deterministic; frozen wholesale by the gradient checker.
struct SampleNoise {
  double t_vid = 0.5;
  double t_act = 0.5;
  std::vector<double> eps_vid;
  std::vector<double> eps_act;
  bool cfg_drop = false;
  bool idm_aug = false;
  double idm_t_aug = 0.25;
  std::vector<double> idm_eps_aug;
};

SampleNoise draw_sample_noise(Pcg32& rng, const VariantConfig& vc, const ModelConfig& mc);

struct SampleLoss {
  Tensor total;
  Tensor act;
  Tensor vid;  // undefined for NoCoTrain (reported as 0)
};

// Variant-specific training loss for one extracted chunk.
SampleLoss build_sample_loss(Graph& g, const WamModel& model, const Chunk& chunk,
                             const VariantConfig& vc, const SampleNoise& noise);

struct StepLosses {
  double total = 0.0;
  double act = 0.0;
  double vid = 0.0;
};

// One training step over a batch: draws per-sample noise from rng,
// accumulates mean parameter gradients into grad_sink (path order),
// returns mean losses. Worker threads split samples round-robin; the
// reduction order is fixed for a given thread count.
StepLosses train_step(const WamModel& model, const std::vector<Chunk>& batch,
                      const VariantConfig& vc, Pcg32& rng, std::vector<double>& grad_sink,
                      int threads = 1);

struct ComputeReport {
  uint64_t token_passes = 0;
  uint64_t forward_passes = 0;
  uint64_t max_seq_len = 0;
  double wall_ms = 0.0;
};

struct InferResult {
  std::vector<double> actions;  // [H * A], clamped to [-1,1]
  bool has_video = false;
  std::vector<double> video_pred;  // [n_future * d_patch] (Joint / Idm)
  ComputeReport report;
};

// Variant-specific inference from one observation frame.
InferResult infer(const WamModel& model, const Frame& obs, int task, const VariantConfig& vc,
                  const SamplerConfig& sampler, Pcg32& rng, int patch_size);

// Closed-form token-pass counts (cfg scale 1.0), cross-checked against
// the instrumented counters:
//   fastwam / nocotrain: n_clean + n_steps_action * n_action
//   joint:               n_steps_action * (n_clean + n_future + n_action)
//   idm:                 n_steps_video * (n_clean + n_future)
//                        + (n_clean + n_future) + n_steps_action * n_action
uint64_t count_token_passes(const VariantConfig& vc, const TokenLayout& layout);

}  // namespace fastwam
