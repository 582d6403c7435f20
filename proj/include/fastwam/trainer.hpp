#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fastwam/config.hpp"

namespace fastwam {

// Optimizer + data-order state stored next to the `.fwam` params so a
// resumed run continues bit-exactly.
struct TrainerState {
  AdamWState opt;
  uint64_t rng_state = 0;
  uint64_t rng_inc = 0;
  bool rng_has_spare = false;
  double rng_spare = 0.0;

  void save(const std::string& path) const;
  static TrainerState load(const std::string& path, std::size_t expect_size);
};

struct TrainResult {
  std::string checkpoint_prefix;  // <prefix>.fwam / .opt / .cfg
  std::vector<StepLosses> losses;
  double wall_seconds = 0.0;
};

// Writes <prefix>.fwam (params), <prefix>.opt (optimizer + rng), and
// <prefix>.cfg (config echo).
void save_checkpoint(const std::string& prefix, const ParamStore& params,
                     const TrainerState& state, const TrainConfig& cfg);

struct LoadedCheckpoint {
  TrainConfig cfg;
  WamModel model;
  TrainerState state;
};
LoadedCheckpoint load_checkpoint(const std::string& prefix);

// Deterministic training loop: seeded data order, per-step JSONL metrics
// in <out_dir>/metrics.jsonl, periodic checkpoints, final checkpoint at
// <out_dir>/ckpt_final. resume_from restarts from a checkpoint prefix and
// reproduces the original run's remaining losses bit-exactly.
TrainResult train(const TrainConfig& cfg,
                  const std::optional<std::string>& resume_from = std::nullopt);

}  // namespace fastwam
