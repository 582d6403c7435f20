#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "fastwam/masks.hpp"
#include "fastwam/param_store.hpp"
#include "fastwam/tokenize.hpp"

namespace fastwam {

struct ModelConfig {
  int d_video = 128;
  int d_action = 64;
  int d_attn = 64;
  int n_heads = 4;
  int n_blocks = 4;
  int d_patch = 16;      // patch_size^2 (grayscale)
  int action_dim = 2;    // A
  int d_instr = 32;
  int n_instr = 2;
  int num_tasks = 4;
  int d_time_sin = 32;   // sinusoidal time feature width
  double dropout = 0.0;  // only 0.0 is supported (see config parsing)
  TokenLayout layout;

  int d_head() const { return d_attn / n_heads; }
  void validate() const;
};

// Mixture-of-Transformers model: a video branch (clean + future tokens)
// and an action expert branch joined by shared masked attention in a
// common d_attn space, cross-attention to learned instruction
// embeddings, and adaptive scale/shift time modulation of the pre-norms.
class WamModel {
 public:
  ModelConfig cfg;
  ParamStore params;

  // Deterministic parameter set and init for a given config + seed.
  // zero_final zero-initializes velocity heads and modulation nets
  // (training default); gradient checks use fully random init.
  static WamModel build(const ModelConfig& cfg, uint64_t init_seed, bool zero_final = true);

  // Closed-form parameter count; asserted against the actual store.
  static std::size_t expected_param_count(const ModelConfig& cfg);

  // Instruction row used when classifier-free guidance drops the task.
  int null_instr_row() const { return cfg.num_tasks; }
};

enum class Branch { Video, Action };

// One token group fed to the transformer.
struct GroupSpec {
  Branch branch = Branch::Video;
  const std::vector<double>* tokens = nullptr;  // [n_tokens, feat_in]
  int n_tokens = 0;
  double t = 0.0;      // conditioning time (clean context uses 0)
  int pos_offset = 0;  // row offset into the branch positional table
  bool want_velocity = false;
};

// Per-block key/value tensors of a context prefix, plus its final hidden
// states; produced by one forward pass and reused across denoising steps.
struct ContextCache {
  int n_ctx = 0;
  int n_heads = 0;
  int d_head = 0;
  int n_blocks = 0;
  std::vector<std::vector<double>> k_blocks;  // per block: [H * n_ctx * dh]
  std::vector<std::vector<double>> v_blocks;
  std::vector<double> final_hidden;  // [n_ctx, d_video]
  const WamModel* model_tag = nullptr;
};

// Instrumentation shared by the compute-accounting tests: token_passes
// counts query tokens processed per forward pass.
struct PassCounters {
  uint64_t token_passes = 0;
  uint64_t forward_passes = 0;
  uint64_t max_seq_len = 0;

  void record(uint64_t tokens, uint64_t seq_len) {
    token_passes += tokens;
    forward_passes += 1;
    if (seq_len > max_seq_len) max_seq_len = seq_len;
  }
};

struct SeqResult {
  std::vector<Tensor> hidden;    // final hidden states per group
  std::vector<Tensor> velocity;  // defined where want_velocity was set
};

// Core transformer pass over an ordered list of token groups. mask is
// sized [n_present, n_prefix + n_present]; prefix (when given) supplies
// cached K/V rows that occupy the leading key columns of every block.
SeqResult run_sequence(Graph& g, const WamModel& model, const std::vector<GroupSpec>& groups,
                       const BoolMatrix& mask, int instr_row, PassCounters* counters = nullptr,
                       ContextCache* capture = nullptr, const ContextCache* prefix = nullptr);

struct TrainOutputs {
  Tensor v_video;       // [n_future, d_patch]; undefined when future absent
  Tensor v_action;      // [H, A]
  Tensor clean_hidden;  // [n_clean, d_video] final hidden states
};

// Training-mask forward. future_noisy may be empty under TrainFastWam
// (the no-co-train variant omits the group entirely); the mask is then
// restricted to the present groups.
TrainOutputs forward_train(Graph& g, const WamModel& model, const std::vector<double>& clean,
                           const std::vector<double>& future_noisy,
                           const std::vector<double>& action_noisy, double t_vid, double t_act,
                           int instr_row, MaskMode mode, PassCounters* counters = nullptr);

// Single forward pass over the clean tokens only (mask C->C), capturing
// per-block K/V for reuse by cached action denoising.
ContextCache encode_context(const WamModel& model, const std::vector<double>& clean_tokens,
                            int instr_row, PassCounters* counters = nullptr);

// IDM stage-2 context: clean tokens plus generated future latents, both
// treated as clean context (t = 0).
ContextCache encode_context_with_future(const WamModel& model, const std::vector<double>& clean,
                                        const std::vector<double>& future_latents, int instr_row,
                                        PassCounters* counters = nullptr);

// Action branch pass attending to [cached context || action tokens].
// Bit-identical to the v_action of forward_train on the same inputs.
std::vector<double> action_forward_cached(const WamModel& model, const ContextCache& cache,
                                          const std::vector<double>& action_noisy, double t_act,
                                          int instr_row, PassCounters* counters = nullptr);

// Video-branch velocity pass for imagine-then-execute variants:
// groups [C(t=0), F(t)], mask infer_video_only. Returns [n_future, d_patch].
std::vector<double> video_forward(const WamModel& model, const std::vector<double>& clean,
                                  const std::vector<double>& future_noisy, double t_vid,
                                  int instr_row, PassCounters* counters = nullptr);

// Same pass on a caller-supplied (training) graph.
Tensor forward_video_train(Graph& g, const WamModel& model, const std::vector<double>& clean,
                           const std::vector<double>& future_noisy, double t_vid, int instr_row,
                           PassCounters* counters = nullptr);

// IDM action sub-step on a training graph: clean tokens plus context
// future latents (conditioned at t=0) plus noisy actions, mask
// infer_idm_action. Returns the action velocity.
Tensor forward_idm_action_train(Graph& g, const WamModel& model, const std::vector<double>& clean,
                                const std::vector<double>& future_ctx,
                                const std::vector<double>& action_noisy, double t_act,
                                int instr_row, PassCounters* counters = nullptr);

// Full joint inference pass (mask train_joint): denoises future and
// action tokens together; returns both velocities.
struct JointVelocities {
  std::vector<double> v_video;
  std::vector<double> v_action;
};
JointVelocities joint_forward(const WamModel& model, const std::vector<double>& clean,
                              const std::vector<double>& future_noisy,
                              const std::vector<double>& action_noisy, double t, int instr_row,
                              PassCounters* counters = nullptr);

}  // namespace fastwam
