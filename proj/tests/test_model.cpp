#include <cstring>

#include "doctest.h"
#include "fastwam/errors.hpp"
#include "fastwam/model.hpp"
#include "fastwam/rng.hpp"

using namespace fastwam;

namespace {

TokenLayout tiny_layout(int c, int f, int a) {
  TokenLayout l;
  l.n_clean = c;
  l.n_future = f;
  l.n_action = a;
  return l;
}

ModelConfig micro_config(TokenLayout layout) {
  ModelConfig cfg;
  cfg.d_video = 16;
  cfg.d_action = 8;
  cfg.d_attn = 8;
  cfg.n_heads = 2;
  cfg.n_blocks = 1;
  cfg.d_patch = 16;
  cfg.d_instr = 8;
  cfg.d_time_sin = 16;
  cfg.layout = layout;
  return cfg;
}

std::vector<double> randn(Pcg32& rng, std::size_t n, double s = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal() * s;
  return v;
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::string mask_rows(MaskMode mode, const TokenLayout& l) {
  return mask_to_text(build_mask(mode, l));
}

}  // namespace

TEST_CASE("build_mask matches the stated group rules on a (2,2,2) layout") {
  TokenLayout l = tiny_layout(2, 2, 2);
  CHECK(mask_rows(MaskMode::TrainFastWam, l) ==
        "110000\n110000\n111100\n111100\n110011\n110011\n");
  CHECK(mask_rows(MaskMode::InferFastWam, l) == "1100\n1100\n1111\n1111\n");
  CHECK(mask_rows(MaskMode::TrainJoint, l) ==
        "110000\n110000\n111111\n111111\n111111\n111111\n");
  CHECK(mask_rows(MaskMode::InferVideoOnly, l) == "1100\n1100\n1111\n1111\n");
  CHECK(mask_rows(MaskMode::InferIdmAction, l) ==
        "110000\n110000\n111100\n111100\n111111\n111111\n");
}

TEST_CASE("build_mask never produces an empty query row") {
  for (MaskMode mode : {MaskMode::TrainFastWam, MaskMode::TrainJoint, MaskMode::InferFastWam,
                        MaskMode::InferVideoOnly, MaskMode::InferIdmAction}) {
    for (auto [c, f, a] : {std::tuple{2, 2, 2}, std::tuple{16, 64, 8}, std::tuple{4, 8, 2}}) {
      BoolMatrix m = build_mask(mode, tiny_layout(c, f, a));
      CHECK(m.rows >= 1);  // validate_no_empty_rows ran inside build_mask
    }
  }
}

TEST_CASE("unknown mask mode string is a config error") {
  CHECK_THROWS_AS(mask_mode_from_string("sideways"), ConfigError);
}

TEST_CASE("parameter count matches the closed-form formula") {
  for (auto [c, f, a] : {std::tuple{4, 8, 2}, std::tuple{16, 64, 8}}) {
    ModelConfig cfg = micro_config(tiny_layout(c, f, a));
    WamModel m = WamModel::build(cfg, 11);
    CHECK(m.params.total_size() == WamModel::expected_param_count(cfg));
  }
  ModelConfig toy;
  toy.layout = tiny_layout(16, 64, 8);
  WamModel m = WamModel::build(toy, 3);
  CHECK(m.params.total_size() == WamModel::expected_param_count(toy));
}

TEST_CASE("model build is deterministic given config and seed") {
  ModelConfig cfg = micro_config(tiny_layout(4, 8, 2));
  WamModel a = WamModel::build(cfg, 42, false);
  WamModel b = WamModel::build(cfg, 42, false);
  REQUIRE(a.params.count() == b.params.count());
  for (const auto& [path, e] : a.params.entries()) {
    CHECK(bits_equal(e.value, b.params.at(path).value));
  }
}

TEST_CASE("no-leakage: v_action and clean hiddens invariant to future tokens") {
  // Acceptance criterion 1 at unit-test scale: 3 layouts x several seeds.
  for (auto [c, f, a] : {std::tuple{2, 2, 2}, std::tuple{4, 8, 2}, std::tuple{16, 64, 8}}) {
    ModelConfig cfg = micro_config(tiny_layout(c, f, a));
    WamModel model = WamModel::build(cfg, 5, /*zero_final=*/false);
    for (uint64_t seed = 0; seed < 3; ++seed) {
      Pcg32 rng(seed, 91);
      auto clean = randn(rng, static_cast<std::size_t>(c) * cfg.d_patch);
      auto fut1 = randn(rng, static_cast<std::size_t>(f) * cfg.d_patch);
      auto fut2 = randn(rng, static_cast<std::size_t>(f) * cfg.d_patch, 37.0);
      auto act = randn(rng, static_cast<std::size_t>(a) * cfg.action_dim);

      Graph g1(model.params, false);
      auto o1 = forward_train(g1, model, clean, fut1, act, 0.4, 0.6, 1, MaskMode::TrainFastWam);
      Graph g2(model.params, false);
      auto o2 = forward_train(g2, model, clean, fut2, act, 0.4, 0.6, 1, MaskMode::TrainFastWam);
      CHECK(bits_equal(o1.v_action.to_vector(), o2.v_action.to_vector()));
      CHECK(bits_equal(o1.clean_hidden.to_vector(), o2.clean_hidden.to_vector()));
      // video velocities must differ (the perturbation is visible there)
      CHECK_FALSE(bits_equal(o1.v_video.to_vector(), o2.v_video.to_vector()));
    }
  }
}

TEST_CASE("train_joint: v_action responds to future-token perturbation") {
  ModelConfig cfg = micro_config(tiny_layout(4, 8, 2));
  WamModel model = WamModel::build(cfg, 13, false);
  Pcg32 rng(13, 91);
  auto clean = randn(rng, 4 * 16);
  auto fut1 = randn(rng, 8 * 16);
  auto fut2 = randn(rng, 8 * 16, 5.0);
  auto act = randn(rng, 2 * 2);
  Graph g1(model.params, false);
  auto o1 = forward_train(g1, model, clean, fut1, act, 0.4, 0.6, 1, MaskMode::TrainJoint);
  Graph g2(model.params, false);
  auto o2 = forward_train(g2, model, clean, fut2, act, 0.4, 0.6, 1, MaskMode::TrainJoint);
  CHECK_FALSE(bits_equal(o1.v_action.to_vector(), o2.v_action.to_vector()));
}

TEST_CASE("clean hiddens identical whether or not other groups are present") {
  ModelConfig cfg = micro_config(tiny_layout(4, 8, 2));
  WamModel model = WamModel::build(cfg, 17, false);
  Pcg32 rng(17, 91);
  auto clean = randn(rng, 4 * 16);
  auto fut = randn(rng, 8 * 16);
  auto act = randn(rng, 2 * 2);

  Graph g1(model.params, false);
  auto full = forward_train(g1, model, clean, fut, act, 0.3, 0.7, 2, MaskMode::TrainFastWam);
  ContextCache cache = encode_context(model, clean, 2);
  CHECK(bits_equal(full.clean_hidden.to_vector(), cache.final_hidden));
}

TEST_CASE("single-pass equivalence: cached action pass == forward_train (20 seeds)") {
  // Acceptance criterion 2: the flagship test of this module.
  ModelConfig cfg = micro_config(tiny_layout(4, 8, 2));
  for (uint64_t seed = 0; seed < 20; ++seed) {
    WamModel model = WamModel::build(cfg, 100 + seed, /*zero_final=*/false);
    Pcg32 rng(seed, 92);
    auto clean = randn(rng, 4 * 16);
    auto fut = randn(rng, 8 * 16);
    auto act = randn(rng, 2 * 2);
    const double t_act = 0.05 + 0.9 * rng.next_double01();
    const int task = static_cast<int>(rng.next_u32() % 4);

    Graph g(model.params, false);
    auto full = forward_train(g, model, clean, fut, act, 0.5, t_act, task, MaskMode::TrainFastWam);
    ContextCache cache = encode_context(model, clean, task);
    auto cached = action_forward_cached(model, cache, act, t_act, task);
    CHECK(bits_equal(full.v_action.to_vector(), cached));
  }
}

TEST_CASE("encode_context K/V match forward_train's clean K/V bit-exactly") {
  // The cache equivalence test above implies this; verify the cache is
  // also internally deterministic.
  ModelConfig cfg = micro_config(tiny_layout(4, 8, 2));
  WamModel model = WamModel::build(cfg, 21, false);
  Pcg32 rng(21, 93);
  auto clean = randn(rng, 4 * 16);
  ContextCache c1 = encode_context(model, clean, 0);
  ContextCache c2 = encode_context(model, clean, 0);
  REQUIRE(c1.k_blocks.size() == c2.k_blocks.size());
  for (std::size_t b = 0; b < c1.k_blocks.size(); ++b) {
    CHECK(bits_equal(c1.k_blocks[b], c2.k_blocks[b]));
    CHECK(bits_equal(c1.v_blocks[b], c2.v_blocks[b]));
  }
  CHECK(bits_equal(c1.final_hidden, c2.final_hidden));
}

TEST_CASE("changing the task id changes the cached hidden states") {
  ModelConfig cfg = micro_config(tiny_layout(4, 8, 2));
  WamModel model = WamModel::build(cfg, 23, false);
  Pcg32 rng(23, 94);
  auto clean = randn(rng, 4 * 16);
  ContextCache c0 = encode_context(model, clean, 0);
  ContextCache c1 = encode_context(model, clean, 1);
  CHECK_FALSE(bits_equal(c0.final_hidden, c1.final_hidden));
}

TEST_CASE("cached action pass: time conditioning is live") {
  ModelConfig cfg = micro_config(tiny_layout(4, 8, 2));
  WamModel model = WamModel::build(cfg, 29, false);
  Pcg32 rng(29, 95);
  auto clean = randn(rng, 4 * 16);
  auto act = randn(rng, 2 * 2);
  ContextCache cache = encode_context(model, clean, 0);
  auto va = action_forward_cached(model, cache, act, 0.2, 0);
  auto vb = action_forward_cached(model, cache, act, 0.9, 0);
  CHECK_FALSE(bits_equal(va, vb));
}

TEST_CASE("cached action pass with zero tokens input is finite and deterministic") {
  ModelConfig cfg = micro_config(tiny_layout(4, 8, 2));
  WamModel model = WamModel::build(cfg, 31, false);
  Pcg32 rng(31, 96);
  auto clean = randn(rng, 4 * 16);
  std::vector<double> act(2 * 2, 0.0);
  ContextCache cache = encode_context(model, clean, 3);
  auto va = action_forward_cached(model, cache, act, 0.5, 3);
  auto vb = action_forward_cached(model, cache, act, 0.5, 3);
  CHECK(bits_equal(va, vb));
  for (double v : va) CHECK(std::isfinite(v));
}

TEST_CASE("cache built by another model instance is rejected") {
  ModelConfig cfg = micro_config(tiny_layout(4, 8, 2));
  WamModel m1 = WamModel::build(cfg, 1, false);
  WamModel m2 = WamModel::build(cfg, 1, false);
  Pcg32 rng(1, 97);
  auto clean = randn(rng, 4 * 16);
  auto act = randn(rng, 2 * 2);
  ContextCache cache = encode_context(m1, clean, 0);
  CHECK_THROWS_AS(action_forward_cached(m2, cache, act, 0.5, 0), ConfigError);
}

TEST_CASE("IDM: cached C+F context equals full infer_idm_action pass") {
  ModelConfig cfg = micro_config(tiny_layout(4, 8, 2));
  WamModel model = WamModel::build(cfg, 37, false);
  Pcg32 rng(37, 98);
  auto clean = randn(rng, 4 * 16);
  auto fut = randn(rng, 8 * 16);
  auto act = randn(rng, 2 * 2);

  // Full pass with the idm mask, future treated as clean context (t=0):
  // replicate via run_sequence to keep the comparison honest.
  Graph g(model.params, false);
  std::vector<GroupSpec> groups = {
      {Branch::Video, &clean, 4, 0.0, 0, false},
      {Branch::Video, &fut, 8, 0.0, 4, false},
      {Branch::Action, &act, 2, 0.35, 0, true},
  };
  BoolMatrix mask = build_mask(MaskMode::InferIdmAction, cfg.layout);
  SeqResult full = run_sequence(g, model, groups, mask, 1);

  ContextCache cache = encode_context_with_future(model, clean, fut, 1);
  auto cached = action_forward_cached(model, cache, act, 0.35, 1);
  CHECK(bits_equal(full.velocity[2].to_vector(), cached));
}

TEST_CASE("fastwam gradient flow: future-only params get zero action-loss grad") {
  ModelConfig cfg = micro_config(tiny_layout(4, 8, 2));
  WamModel model = WamModel::build(cfg, 41, /*zero_final=*/false);
  Pcg32 rng(41, 99);
  auto clean = randn(rng, 4 * 16);
  auto fut = randn(rng, 8 * 16);
  auto act = randn(rng, 2 * 2);
  std::vector<double> target = randn(rng, 2 * 2);

  auto act_loss_grads = [&](MaskMode mode) {
    Graph g(model.params, true);
    auto out = forward_train(g, model, clean, fut, act, 0.5, 0.5, 0, mode);
    Tensor loss = mse_masked(out.v_action, target);
    loss.backward();
    std::vector<double> flat(model.params.total_size(), 0.0);
    g.accumulate_param_grads(flat);
    return flat;
  };

  auto norm_over = [&](const std::vector<double>& flat, const std::string& path) {
    std::size_t off = model.params.offset_of(path);
    std::size_t n = model.params.at(path).value.size();
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += flat[off + i] * flat[off + i];
    return s;
  };

  auto fast = act_loss_grads(MaskMode::TrainFastWam);
  // Future positional rows are the only future-specific inputs; their
  // gradient under the fast-wam action loss must be exactly zero.
  std::size_t off = model.params.offset_of("embed/video/pos");
  for (int row = 4; row < 12; ++row) {
    for (int dcol = 0; dcol < cfg.d_video; ++dcol) {
      CHECK(fast[off + static_cast<std::size_t>(row) * cfg.d_video + dcol] == 0.0);
    }
  }
  CHECK(norm_over(fast, "head/video/w") == 0.0);
  // Video-branch shared weights still receive action-loss gradient via the
  // clean tokens (the intended co-training coupling).
  CHECK(norm_over(fast, "blocks/00/video/attn/k/w") > 0.0);

  auto joint = act_loss_grads(MaskMode::TrainJoint);
  double fut_pos_sq = 0.0;
  for (int row = 4; row < 12; ++row) {
    for (int dcol = 0; dcol < cfg.d_video; ++dcol) {
      double v = joint[off + static_cast<std::size_t>(row) * cfg.d_video + dcol];
      fut_pos_sq += v * v;
    }
  }
  CHECK(fut_pos_sq > 0.0);
}
