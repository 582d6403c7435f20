#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fastwam/config.hpp"

namespace fastwam {

struct EpisodeOutcome {
  uint64_t seed = 0;
  int task = 0;
  bool success = false;
  int completion_step = -1;
};

struct RolloutMetrics {
  double success_rate = 0.0;
  double mean_completion_steps = 0.0;  // over successful episodes
  int n_eval = 0;
  std::vector<EpisodeOutcome> episodes;
};

// Plans the next H actions from the current observation; called once per
// chunk (the whole chunk executes open-loop before replanning). The true
// world state is supplied for privileged policies (the scripted expert);
// learned policies must use only the frame and task.
using ChunkPolicy =
    std::function<std::vector<double>(const WorldState& state, const Frame& obs, int task,
                                      uint64_t episode_seed)>;

// Closed-loop evaluation: observe -> plan chunk -> execute all H actions
// -> repeat until success or max_steps. Episode seeds come from the
// evaluation index band, provably disjoint from training seeds.
RolloutMetrics evaluate_policy(const ChunkPolicy& policy, const WorldConfig& world, int horizon,
                               int n_eval, uint64_t seed_base, int max_steps);

// Model-backed policy (one infer() per chunk, rng derived from the
// episode seed).
ChunkPolicy model_policy(const WamModel& model, const TrainConfig& cfg);

// Scripted-expert policy wrapped in the same chunked evaluator (sanity
// oracle). Plans by rolling the true dynamics forward.
ChunkPolicy expert_policy(const WorldConfig& world);

// Convenience: evaluate a checkpoint prefix.
RolloutMetrics evaluate_checkpoint(const std::string& prefix, int n_eval, uint64_t seed_base,
                                   int max_steps);

}  // namespace fastwam
