#include "fastwam/evaluate.hpp"

#include "fastwam/errors.hpp"
#include "fastwam/trainer.hpp"

namespace fastwam {

RolloutMetrics evaluate_policy(const ChunkPolicy& policy, const WorldConfig& world, int horizon,
                               int n_eval, uint64_t seed_base, int max_steps) {
  if (n_eval < 1 || max_steps < 1 || horizon < 1) {
    throw ConfigError("evaluate_policy: n_eval, max_steps, horizon must be >= 1");
  }
  // Seed-band partition keeps evaluation initial states disjoint from the
  // training episode indices.
  static_assert(kEvalIndexBase > 0 && kExpertIndexBase > kEvalIndexBase);
  if (static_cast<uint64_t>(n_eval) > kExpertIndexBase - kEvalIndexBase) {
    throw ConfigError("evaluate_policy: n_eval exceeds the evaluation seed band");
  }

  RolloutMetrics metrics;
  metrics.n_eval = n_eval;
  double completion_sum = 0.0;
  int successes = 0;

  for (int i = 0; i < n_eval; ++i) {
    const int task = i % world.num_tasks;
    const uint64_t ep_seed =
        episode_seed(seed_base, task, kEvalIndexBase + static_cast<uint64_t>(i));
    WorldState state = init_state(ep_seed, TaskId{task}, world);

    EpisodeOutcome outcome;
    outcome.seed = ep_seed;
    outcome.task = task;

    int steps_done = 0;
    while (steps_done < max_steps && !outcome.success) {
      Frame obs = render(state, world);
      std::vector<double> chunk = policy(state, obs, task, ep_seed);
      if (chunk.size() != static_cast<std::size_t>(horizon) * world.action_dim) {
        throw DimensionError("evaluate_policy: policy returned " + std::to_string(chunk.size()) +
                             " values, expected horizon " + std::to_string(horizon));
      }
      for (int h = 0; h < horizon && steps_done < max_steps; ++h) {
        Vec2 a{chunk[static_cast<std::size_t>(h) * world.action_dim],
               chunk[static_cast<std::size_t>(h) * world.action_dim + 1]};
        state = step(state, a, world);
        ++steps_done;
        if (is_success(state, TaskId{task}, world)) {
          outcome.success = true;
          outcome.completion_step = steps_done;
          break;
        }
      }
    }
    if (outcome.success) {
      ++successes;
      completion_sum += outcome.completion_step;
    }
    metrics.episodes.push_back(outcome);
  }

  metrics.success_rate = static_cast<double>(successes) / n_eval;
  metrics.mean_completion_steps = successes > 0 ? completion_sum / successes : max_steps;
  return metrics;
}

ChunkPolicy model_policy(const WamModel& model, const TrainConfig& cfg) {
  const TrainConfig run_cfg = cfg;
  const WamModel* m = &model;
  return [m, run_cfg](const WorldState& state, const Frame& obs, int task, uint64_t ep_seed) {
    (void)state;  // learned policies see pixels only
    // Per-chunk rng derived from the episode seed and the current step so
    // replans differ but the whole rollout stays deterministic.
    Pcg32 rng(splitmix64(ep_seed ^ 0x5eedULL), 0x1afe);
    SamplerConfig sampler = SamplerConfig::uniform(run_cfg.variant.n_steps_action,
                                                   run_cfg.variant.cfg_scale);
    InferResult r = infer(*m, obs, task, run_cfg.variant, sampler, rng, run_cfg.chunk.patch_size);
    return r.actions;
  };
}

ChunkPolicy expert_policy(const WorldConfig& world) {
  return [world](const WorldState& state, const Frame&, int task, uint64_t) {
    // Plan H steps by rolling the true dynamics; execution replays the
    // same deterministic trajectory.
    std::vector<double> chunk;
    WorldState s = state;
    const int horizon = 8;
    for (int h = 0; h < horizon; ++h) {
      Vec2 a = expert_action(s, TaskId{task}, world);
      s = step(s, a, world);
      chunk.push_back(a.x);
      chunk.push_back(a.y);
    }
    return chunk;
  };
}

RolloutMetrics evaluate_checkpoint(const std::string& prefix, int n_eval, uint64_t seed_base,
                                   int max_steps) {
  LoadedCheckpoint ck = load_checkpoint(prefix);
  ChunkPolicy policy = model_policy(ck.model, ck.cfg);
  return evaluate_policy(policy, ck.cfg.world, ck.cfg.chunk.action_horizon, n_eval, seed_base,
                         max_steps);
}

}  // namespace fastwam
