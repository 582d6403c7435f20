#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fastwam/rng.hpp"

namespace fastwam {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double c) const { return {x * c, y * c}; }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double norm() const;
};

struct WorldConfig {
  int frame_px = 16;        // square frames
  int num_tasks = 4;        // push to left / right / top / bottom goal
  double v_max = 0.06;      // agent displacement per unit action
  double contact_radius = 0.08;
  double success_radius = 0.07;
  // Blob intensities are stored as the f32-exact values so frames survive
  // the f32 dataset payload bit-exactly.
  double blob_agent = static_cast<double>(0.4f);
  double blob_block = static_cast<double>(0.8f);
  double blob_goal = static_cast<double>(0.2f);
  int action_dim = 2;
};

struct WorldState {
  Vec2 agent;
  Vec2 block;
  Vec2 goal;
  int step_index = 0;
};

struct TaskId {
  int id = 0;
};

struct Frame {
  int h = 0;
  int w = 0;
  std::vector<double> px;  // row-major [y*w + x], values in [0,1]

  double at(int y, int x) const { return px[static_cast<std::size_t>(y) * w + x]; }
};

struct EpisodeRecord {
  int task = 0;
  uint64_t seed = 0;
  std::vector<Frame> frames;                   // length steps+1
  std::vector<std::array<double, 2>> actions;  // length steps, values in [-1,1]
  bool success = false;
  int completion_step = -1;  // -1 when never successful
};

// Seed-range partition: training, evaluation, and expert-sanity episode
// indices live in disjoint u64 index bands, asserted by callers.
constexpr uint64_t kTrainIndexBase = 0;
constexpr uint64_t kEvalIndexBase = uint64_t(1) << 20;
constexpr uint64_t kExpertIndexBase = uint64_t(1) << 21;

// Episode seed derivation: two SplitMix64 rounds over (base, task, index).
uint64_t episode_seed(uint64_t base_seed, int task, uint64_t index);

// Seed-determined initial state: agent and block uniform over the
// margin-inset region, task goal plus uniform jitter.
WorldState init_state(uint64_t ep_seed, TaskId task, const WorldConfig& cfg);

// One simulator step. Clamps action components to [-1,1] (incrementing
// *clamp_warnings when it does); throws InputError on non-finite input.
WorldState step(const WorldState& s, Vec2 action, const WorldConfig& cfg,
                int* clamp_warnings = nullptr);

// Deterministic rasterization: 2x2 blobs per entity, max intensity on
// overlap.
Frame render(const WorldState& s, const WorldConfig& cfg);

// Two-phase proportional controller: approach the pushing side of the
// block, then push it toward the goal. Output clamped to [-1,1]^2.
Vec2 expert_action(const WorldState& s, TaskId task, const WorldConfig& cfg);

bool is_success(const WorldState& s, TaskId task, const WorldConfig& cfg);

// Rolls the expert from the seed-determined initial state. Actions are
// rounded to f32 before being applied and recorded, so stored episodes
// replay bit-exactly from the f32 dataset payloads.
EpisodeRecord generate_episode(uint64_t seed, TaskId task, int max_steps, const WorldConfig& cfg);

// Episode dataset file (magic "FWEP"): header (version, H_px, W_px, A,
// num_tasks) then length-prefixed records with f32 pixel/action payloads.
void save_dataset(const std::string& path, const std::vector<EpisodeRecord>& episodes,
                  const WorldConfig& cfg);
std::vector<EpisodeRecord> load_dataset(const std::string& path, WorldConfig* cfg_out = nullptr);

}  // namespace fastwam
