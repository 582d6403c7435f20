#include <cmath>
#include <cstring>

#include "doctest.h"
#include "fastwam/errors.hpp"
#include "fastwam/toyworld.hpp"

using namespace fastwam;

namespace {
const WorldConfig kCfg{};

bool frames_equal(const Frame& a, const Frame& b) {
  return a.h == b.h && a.w == b.w &&
         std::memcmp(a.px.data(), b.px.data(), a.px.size() * sizeof(double)) == 0;
}
}  // namespace

TEST_CASE("step: null action changes only step_index") {
  WorldState s;
  s.agent = {0.3, 0.3};
  s.block = {0.7, 0.7};
  s.goal = {0.9, 0.9};
  WorldState n = step(s, {0, 0}, kCfg);
  CHECK(n.agent.x == s.agent.x);
  CHECK(n.agent.y == s.agent.y);
  CHECK(n.block.x == s.block.x);
  CHECK(n.block.y == s.block.y);
  CHECK(n.step_index == s.step_index + 1);
}

TEST_CASE("step: axis-aligned push moves block along +x only") {
  WorldState s;
  s.agent = {0.5, 0.5};
  s.block = {0.56, 0.5};
  s.goal = {0.9, 0.5};
  WorldState n = step(s, {1, 0}, kCfg);
  CHECK(n.block.x > s.block.x);
  CHECK(n.block.y == s.block.y);
}

TEST_CASE("step: non-finite action is an input error") {
  WorldState s;
  CHECK_THROWS_AS(step(s, {std::nan(""), 0.0}, kCfg), InputError);
}

TEST_CASE("step: out-of-range action is clamped with warning") {
  WorldState s;
  s.agent = {0.5, 0.5};
  s.block = {0.9, 0.9};
  int warnings = 0;
  WorldState n = step(s, {5.0, 0.0}, kCfg, &warnings);
  CHECK(warnings == 1);
  CHECK(n.agent.x == doctest::Approx(0.5 + kCfg.v_max));
}

TEST_CASE("step: 1000 random steps replay byte-identically (seed 42)") {
  auto run = []() {
    Pcg32 rng(42, 0);
    WorldState s = init_state(episode_seed(42, 0, 0), TaskId{0}, kCfg);
    std::vector<WorldState> traj;
    for (int i = 0; i < 1000; ++i) {
      Vec2 a{rng.uniform(-1, 1), rng.uniform(-1, 1)};
      s = step(s, a, kCfg);
      traj.push_back(s);
    }
    return traj;
  };
  auto t1 = run();
  auto t2 = run();
  REQUIRE(t1.size() == t2.size());
  for (std::size_t i = 0; i < t1.size(); ++i) {
    CHECK(std::memcmp(&t1[i], &t2[i], sizeof(WorldState)) == 0);
  }
}

TEST_CASE("render: full overlap shows the block intensity") {
  WorldState s;
  s.agent = {0.0, 0.0};
  s.block = {0.0, 0.0};
  s.goal = {0.0, 0.0};
  Frame f = render(s, kCfg);
  CHECK(f.at(0, 0) == kCfg.blob_block);
  CHECK(f.at(1, 1) == kCfg.blob_block);
  double total = 0;
  for (double v : f.px) total += v;
  CHECK(total == doctest::Approx(4 * kCfg.blob_block));
}

TEST_CASE("render: separated entities give three distinct blobs") {
  WorldState s;
  s.agent = {0.05, 0.05};
  s.block = {0.9, 0.05};
  s.goal = {0.05, 0.9};
  Frame f = render(s, kCfg);
  int n_agent = 0, n_block = 0, n_goal = 0, n_other = 0;
  for (double v : f.px) {
    if (v == kCfg.blob_agent) ++n_agent;
    else if (v == kCfg.blob_block) ++n_block;
    else if (v == kCfg.blob_goal) ++n_goal;
    else if (v != 0.0) ++n_other;
  }
  CHECK(n_agent == 4);
  CHECK(n_block == 4);
  CHECK(n_goal == 4);
  CHECK(n_other == 0);
}

TEST_CASE("render changes iff an entity changed cell (5x5 agent grid)") {
  for (int gy = 0; gy < 5; ++gy) {
    for (int gx = 0; gx < 5; ++gx) {
      WorldState s;
      s.agent = {0.1 + 0.18 * gx, 0.1 + 0.18 * gy};
      s.block = {0.95, 0.95};
      s.goal = {0.02, 0.95};
      Vec2 a{0.31, 0.17};
      WorldState n = step(s, a, kCfg);
      bool cell_changed =
          static_cast<int>(std::floor(s.agent.x * kCfg.frame_px)) !=
              static_cast<int>(std::floor(n.agent.x * kCfg.frame_px)) ||
          static_cast<int>(std::floor(s.agent.y * kCfg.frame_px)) !=
              static_cast<int>(std::floor(n.agent.y * kCfg.frame_px));
      bool frame_changed = !frames_equal(render(s, kCfg), render(n, kCfg));
      CHECK(frame_changed == cell_changed);
    }
  }
}

TEST_CASE("is_success thresholds") {
  WorldState s;
  s.goal = {0.5, 0.5};
  s.block = {0.5, 0.5};
  CHECK(is_success(s, TaskId{0}, kCfg));
  s.block = {1.0, 0.5};  // distance 0.5
  CHECK_FALSE(is_success(s, TaskId{0}, kCfg));
  // Exactly on the closed boundary: |block-goal| == 0.07.
  s.goal = {0.0, 0.0};
  s.block = {0.07, 0.0};
  CHECK(is_success(s, TaskId{0}, kCfg));
}

TEST_CASE("expert: completed task yields zero action") {
  WorldState s;
  s.goal = {0.5, 0.5};
  s.block = {0.52, 0.5};
  s.agent = {0.3, 0.3};
  Vec2 a = expert_action(s, TaskId{0}, kCfg);
  CHECK(a.x == 0.0);
  CHECK(a.y == 0.0);
}

TEST_CASE("expert: aligned geometry pushes toward goal") {
  WorldState s;
  s.goal = {0.9, 0.5};
  s.block = {0.5, 0.5};
  s.agent = {0.44, 0.5};  // directly behind relative to goal
  Vec2 a = expert_action(s, TaskId{1}, kCfg);
  Vec2 dir = (s.goal - s.block) * (1.0 / (s.goal - s.block).norm());
  double an = a.norm();
  REQUIRE(an > 0);
  double cosine = (a.x * dir.x + a.y * dir.y) / an;
  CHECK(cosine > 0.99);
}

TEST_CASE("expert succeeds on >=95% of 200 held-out seeds within 64 steps") {
  int successes = 0;
  const int n = 200;
  for (int i = 0; i < n; ++i) {
    TaskId task{i % kCfg.num_tasks};
    uint64_t seed = episode_seed(1000, task.id, kExpertIndexBase + static_cast<uint64_t>(i));
    EpisodeRecord ep = generate_episode(seed, task, 64, kCfg);
    if (ep.success) ++successes;
  }
  CHECK(successes >= 190);
}

TEST_CASE("generate_episode is deterministic and consistent") {
  uint64_t seed = episode_seed(7, 2, 5);
  EpisodeRecord a = generate_episode(seed, TaskId{2}, 64, kCfg);
  EpisodeRecord b = generate_episode(seed, TaskId{2}, 64, kCfg);
  REQUIRE(a.frames.size() == b.frames.size());
  REQUIRE(a.actions.size() == b.actions.size());
  CHECK(a.frames.size() == a.actions.size() + 1);
  for (std::size_t i = 0; i < a.frames.size(); ++i) CHECK(frames_equal(a.frames[i], b.frames[i]));
  for (std::size_t i = 0; i < a.actions.size(); ++i) {
    CHECK(a.actions[i][0] == b.actions[i][0]);
    CHECK(a.actions[i][1] == b.actions[i][1]);
  }
  if (a.success) CHECK(a.completion_step <= 64);
}

TEST_CASE("stored episodes replay exactly from initial seed and actions") {
  uint64_t seed = episode_seed(3, 1, 11);
  EpisodeRecord ep = generate_episode(seed, TaskId{1}, 64, kCfg);
  WorldState s = init_state(ep.seed, TaskId{ep.task}, kCfg);
  REQUIRE(frames_equal(render(s, kCfg), ep.frames[0]));
  for (std::size_t i = 0; i < ep.actions.size(); ++i) {
    s = step(s, {ep.actions[i][0], ep.actions[i][1]}, kCfg);
    CHECK(frames_equal(render(s, kCfg), ep.frames[i + 1]));
  }
}

TEST_CASE("dataset save/load round-trips to identical pixels and actions") {
  std::vector<EpisodeRecord> eps;
  for (int i = 0; i < 4; ++i) {
    eps.push_back(generate_episode(episode_seed(5, i % 4, i), TaskId{i % 4}, 32, kCfg));
  }
  const std::string path = "test_dataset_roundtrip.fwep";
  save_dataset(path, eps, kCfg);
  WorldConfig geom;
  auto back = load_dataset(path, &geom);
  REQUIRE(back.size() == eps.size());
  CHECK(geom.frame_px == kCfg.frame_px);
  for (std::size_t e = 0; e < eps.size(); ++e) {
    CHECK(back[e].task == eps[e].task);
    CHECK(back[e].seed == eps[e].seed);
    CHECK(back[e].success == eps[e].success);
    CHECK(back[e].completion_step == eps[e].completion_step);
    REQUIRE(back[e].frames.size() == eps[e].frames.size());
    for (std::size_t i = 0; i < eps[e].frames.size(); ++i) {
      CHECK(frames_equal(back[e].frames[i], eps[e].frames[i]));
    }
    REQUIRE(back[e].actions.size() == eps[e].actions.size());
    for (std::size_t i = 0; i < eps[e].actions.size(); ++i) {
      // payload is f32; generation already rounded, so equality is exact
      CHECK(back[e].actions[i][0] == eps[e].actions[i][0]);
      CHECK(back[e].actions[i][1] == eps[e].actions[i][1]);
    }
  }
  std::remove(path.c_str());
}

TEST_CASE("all rendered pixels and stored actions stay in range") {
  for (int i = 0; i < 8; ++i) {
    EpisodeRecord ep = generate_episode(episode_seed(9, i % 4, i), TaskId{i % 4}, 64, kCfg);
    for (const auto& f : ep.frames) {
      for (double v : f.px) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
    for (const auto& a : ep.actions) {
      CHECK(std::fabs(a[0]) <= 1.0);
      CHECK(std::fabs(a[1]) <= 1.0);
    }
  }
}
