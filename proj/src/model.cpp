#include "fastwam/model.hpp"

#include <cmath>
#include <cstdio>
#include <map>

#include "fastwam/errors.hpp"
#include "fastwam/rng.hpp"

namespace fastwam {

void ModelConfig::validate() const {
  if (d_video < 1 || d_action < 1 || d_attn < 1 || n_heads < 1 || n_blocks < 1 || d_patch < 1 ||
      action_dim < 1 || d_instr < 1 || n_instr < 1 || num_tasks < 1 || d_time_sin < 2) {
    throw ConfigError("ModelConfig: all dimensions must be >= 1");
  }
  if (d_attn % n_heads != 0) {
    throw ConfigError("ModelConfig: d_attn " + std::to_string(d_attn) + " not divisible by " +
                      std::to_string(n_heads) + " heads");
  }
  if (d_time_sin % 2 != 0) throw ConfigError("ModelConfig: d_time_sin must be even");
  if (dropout != 0.0) throw ConfigError("ModelConfig: only dropout == 0.0 is supported");
  if (layout.n_clean < 1 || layout.n_action < 1) {
    throw ConfigError("ModelConfig: layout must have clean and action tokens");
  }
}

namespace {

std::string block_prefix(int block, Branch b) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "blocks/%02d/%s/", block, b == Branch::Video ? "video" : "action");
  return buf;
}

std::string shared_prefix(int block) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "blocks/%02d/instr/", block);
  return buf;
}

int branch_dim(const ModelConfig& cfg, Branch b) {
  return b == Branch::Video ? cfg.d_video : cfg.d_action;
}

const char* branch_name(Branch b) { return b == Branch::Video ? "video" : "action"; }

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Sinusoidal features of the flow time, DiT-style (t scaled by 1000).
std::vector<double> time_features(double t, int d_sin) {
  const int half = d_sin / 2;
  std::vector<double> f(d_sin);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
    const double arg = t * 1000.0 * freq;
    f[i] = std::cos(arg);
    f[half + i] = std::sin(arg);
  }
  return f;
}

}  // namespace

WamModel WamModel::build(const ModelConfig& cfg, uint64_t init_seed, bool zero_final) {
  cfg.validate();
  WamModel model;
  model.cfg = cfg;
  ParamStore& ps = model.params;

  const int dv = cfg.d_video, da = cfg.d_action, dA = cfg.d_attn;
  const int H = cfg.layout.n_action, A = cfg.action_dim;

  ps.add("embed/action/in/b", {da});
  ps.add("embed/action/in/w", {A, da});
  ps.add("embed/action/pos", {H, da});
  ps.add("embed/video/patch/b", {dv});
  ps.add("embed/video/patch/w", {cfg.d_patch, dv});
  ps.add("embed/video/pos", {cfg.layout.n_clean + cfg.layout.n_future, dv});
  ps.add("instr/table", {cfg.num_tasks + 1, cfg.n_instr * cfg.d_instr});

  for (Branch b : {Branch::Video, Branch::Action}) {
    const int d = branch_dim(cfg, b);
    const std::string tp = std::string("time/") + branch_name(b) + "/";
    ps.add(tp + "fc1/b", {d});
    ps.add(tp + "fc1/w", {cfg.d_time_sin, d});
    ps.add(tp + "fc2/b", {d});
    ps.add(tp + "fc2/w", {d, d});
  }

  for (int blk = 0; blk < cfg.n_blocks; ++blk) {
    for (Branch b : {Branch::Video, Branch::Action}) {
      const int d = branch_dim(cfg, b);
      const std::string p = block_prefix(blk, b);
      ps.add(p + "attn/norm/gamma", {d});
      ps.add(p + "attn/norm/beta", {d});
      ps.add(p + "attn/mod/w", {d, 2 * d});
      ps.add(p + "attn/mod/b", {2 * d});
      ps.add(p + "attn/q/w", {d, dA});
      ps.add(p + "attn/q/b", {dA});
      ps.add(p + "attn/k/w", {d, dA});
      ps.add(p + "attn/k/b", {dA});
      ps.add(p + "attn/v/w", {d, dA});
      ps.add(p + "attn/v/b", {dA});
      ps.add(p + "attn/out/w", {dA, d});
      ps.add(p + "attn/out/b", {d});
      ps.add(p + "cross/norm/gamma", {d});
      ps.add(p + "cross/norm/beta", {d});
      ps.add(p + "cross/q/w", {d, dA});
      ps.add(p + "cross/q/b", {dA});
      ps.add(p + "cross/out/w", {dA, d});
      ps.add(p + "cross/out/b", {d});
      ps.add(p + "mlp/norm/gamma", {d});
      ps.add(p + "mlp/norm/beta", {d});
      ps.add(p + "mlp/mod/w", {d, 2 * d});
      ps.add(p + "mlp/mod/b", {2 * d});
      ps.add(p + "mlp/fc1/w", {d, 4 * d});
      ps.add(p + "mlp/fc1/b", {4 * d});
      ps.add(p + "mlp/fc2/w", {4 * d, d});
      ps.add(p + "mlp/fc2/b", {d});
    }
    const std::string sp = shared_prefix(blk);
    ps.add(sp + "k/w", {cfg.d_instr, dA});
    ps.add(sp + "k/b", {dA});
    ps.add(sp + "v/w", {cfg.d_instr, dA});
    ps.add(sp + "v/b", {dA});
  }

  ps.add("head/action/norm/gamma", {da});
  ps.add("head/action/norm/beta", {da});
  ps.add("head/action/w", {da, A});
  ps.add("head/action/b", {A});
  ps.add("head/video/norm/gamma", {dv});
  ps.add("head/video/norm/beta", {dv});
  ps.add("head/video/w", {dv, cfg.d_patch});
  ps.add("head/video/b", {cfg.d_patch});

  // Deterministic init: entries visited in lexicographic path order.
  Pcg32 rng(init_seed, /*seq=*/0x9a9a);
  ps.for_each([&](const std::string& path, ParamStore::Entry& e) {
    const bool is_gamma = ends_with(path, "gamma");
    const bool is_beta = ends_with(path, "beta");
    const bool is_mod = path.find("/mod/") != std::string::npos;
    const bool is_head_linear =
        path.rfind("head/", 0) == 0 && !ends_with(path, "gamma") && !ends_with(path, "beta");
    const bool is_bias = ends_with(path, "/b");

    if (is_gamma) {
      for (auto& v : e.value) v = zero_final ? 1.0 : 1.0 + rng.normal() * 0.05;
      return;
    }
    if (is_beta) {
      for (auto& v : e.value) v = zero_final ? 0.0 : rng.normal() * 0.05;
      return;
    }
    if (zero_final && (is_mod || is_head_linear)) {
      for (auto& v : e.value) v = 0.0;
      return;
    }
    if (zero_final && is_bias) {
      for (auto& v : e.value) v = 0.0;
      return;
    }
    const double std_dev = zero_final ? 0.02 : 0.05;
    for (auto& v : e.value) v = rng.normal() * std_dev;
  });

  if (model.params.total_size() == 0) throw ConfigError("WamModel: empty parameter store");
  return model;
}

std::size_t WamModel::expected_param_count(const ModelConfig& cfg) {
  const std::size_t dv = cfg.d_video, da = cfg.d_action, dA = cfg.d_attn;
  const std::size_t H = cfg.layout.n_action, A = cfg.action_dim;
  const std::size_t dp = cfg.d_patch;

  auto branch_block = [dA](std::size_t d) {
    std::size_t attn = 2 * d + (d * 2 * d + 2 * d) + 3 * (d * dA + dA) + (dA * d + d);
    std::size_t cross = 2 * d + (d * dA + dA) + (dA * d + d);
    std::size_t mlp = 2 * d + (d * 2 * d + 2 * d) + (d * 4 * d + 4 * d) + (4 * d * d + d);
    return attn + cross + mlp;
  };
  std::size_t per_block = branch_block(dv) + branch_block(da) + 2 * (cfg.d_instr * dA + dA);

  std::size_t embeds = (A * da + da) + H * da + (dp * dv + dv) +
                       static_cast<std::size_t>(cfg.layout.n_clean + cfg.layout.n_future) * dv +
                       static_cast<std::size_t>(cfg.num_tasks + 1) * cfg.n_instr * cfg.d_instr;
  std::size_t time_nets = (cfg.d_time_sin * dv + dv + dv * dv + dv) +
                          (cfg.d_time_sin * da + da + da * da + da);
  std::size_t heads = (2 * dv + dv * dp + dp) + (2 * da + da * A + A);

  return static_cast<std::size_t>(cfg.n_blocks) * per_block + embeds + time_nets + heads;
}

namespace {

// Per-pass working set: time features and instruction embedding reused
// across blocks.
struct PassContext {
  std::vector<Tensor> t_feat;  // per group [1, d_branch]
  Tensor instr_emb;            // [n_instr, d_instr]
};

Tensor modulated_norm(Graph& g, const Tensor& x, const std::string& prefix, const Tensor& t_feat) {
  Tensor u = layer_norm(x, g.param(prefix + "norm/gamma"), g.param(prefix + "norm/beta"));
  Tensor mod_in = silu(t_feat);
  Tensor mod = affine(mod_in, g.param(prefix + "mod/w"), g.param(prefix + "mod/b"));
  const int d = x.shape()[1];
  Tensor mod2 = reshape(mod, {2, d});
  Tensor sc = slice_rows(mod2, 0, 1);
  Tensor sh = slice_rows(mod2, 1, 2);
  return row_affine(u, sc, sh);
}

}  // namespace

SeqResult run_sequence(Graph& g, const WamModel& model, const std::vector<GroupSpec>& groups,
                       const BoolMatrix& mask, int instr_row, PassCounters* counters,
                       ContextCache* capture, const ContextCache* prefix) {
  const ModelConfig& cfg = model.cfg;
  if (groups.empty()) throw ConfigError("run_sequence: no token groups");
  if (instr_row < 0 || instr_row > cfg.num_tasks) {
    throw ConfigError("run_sequence: instruction row " + std::to_string(instr_row) +
                      " out of range");
  }
  const int n_prefix = prefix ? prefix->n_ctx : 0;
  if (prefix) {
    if (prefix->model_tag != &model || prefix->n_heads != cfg.n_heads ||
        prefix->d_head != cfg.d_head() || prefix->n_blocks != cfg.n_blocks) {
      throw ConfigError("run_sequence: context cache does not match model config");
    }
  }

  int n_present = 0;
  for (const auto& grp : groups) {
    if (grp.n_tokens < 1 || !grp.tokens) throw ConfigError("run_sequence: empty group");
    n_present += grp.n_tokens;
  }
  if (mask.rows != n_present || mask.cols != n_prefix + n_present) {
    throw DimensionError("run_sequence: mask " + std::to_string(mask.rows) + "x" +
                         std::to_string(mask.cols) + " does not match tokens " +
                         std::to_string(n_present) + "+" + std::to_string(n_prefix) + " prefix");
  }
  if (counters) {
    counters->record(static_cast<uint64_t>(n_present),
                     static_cast<uint64_t>(n_prefix + n_present));
  }

  // Embed each group into its branch dim and add positions.
  std::vector<Tensor> h(groups.size());
  PassContext ctx;
  ctx.t_feat.resize(groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const GroupSpec& grp = groups[i];
    const int feat_in = grp.branch == Branch::Video ? cfg.d_patch : cfg.action_dim;
    if (grp.tokens->size() != static_cast<std::size_t>(grp.n_tokens) * feat_in) {
      throw DimensionError("run_sequence: group token data size mismatch");
    }
    Tensor raw = Tensor::from_data({grp.n_tokens, feat_in}, *grp.tokens);
    const std::string bn = branch_name(grp.branch);
    Tensor emb = grp.branch == Branch::Video
                     ? affine(raw, g.param("embed/video/patch/w"), g.param("embed/video/patch/b"))
                     : affine(raw, g.param("embed/action/in/w"), g.param("embed/action/in/b"));
    Tensor pos = slice_rows(g.param(std::string("embed/") + bn + "/pos"), grp.pos_offset,
                            grp.pos_offset + grp.n_tokens);
    h[i] = add(emb, pos);

    Tensor sin_feat = Tensor::from_data({1, cfg.d_time_sin}, time_features(grp.t, cfg.d_time_sin));
    const std::string tp = std::string("time/") + bn + "/";
    Tensor tf = affine(silu(affine(sin_feat, g.param(tp + "fc1/w"), g.param(tp + "fc1/b"))),
                       g.param(tp + "fc2/w"), g.param(tp + "fc2/b"));
    ctx.t_feat[i] = tf;
  }
  ctx.instr_emb = reshape(select_row(g.param("instr/table"), instr_row),
                          {cfg.n_instr, cfg.d_instr});


  for (int blk = 0; blk < cfg.n_blocks; ++blk) {
    // Shared self-attention across the concatenated groups.
    std::vector<Tensor> qs(groups.size()), ks(groups.size()), vs(groups.size());
    for (std::size_t i = 0; i < groups.size(); ++i) {
      const std::string p = block_prefix(blk, groups[i].branch) + "attn/";
      Tensor u = modulated_norm(g, h[i], p, ctx.t_feat[i]);
      qs[i] = affine(u, g.param(p + "q/w"), g.param(p + "q/b"));
      ks[i] = affine(u, g.param(p + "k/w"), g.param(p + "k/b"));
      vs[i] = affine(u, g.param(p + "v/w"), g.param(p + "v/b"));
    }
    Tensor qh = split_heads(groups.size() == 1 ? qs[0] : concat_rows(qs), cfg.n_heads);
    Tensor kh = split_heads(groups.size() == 1 ? ks[0] : concat_rows(ks), cfg.n_heads);
    Tensor vh = split_heads(groups.size() == 1 ? vs[0] : concat_rows(vs), cfg.n_heads);

    if (capture) {
      capture->k_blocks.push_back(kh.to_vector());
      capture->v_blocks.push_back(vh.to_vector());
    }

    Tensor attn = prefix ? attention_with_prefix(qh, kh, vh, prefix->k_blocks[blk],
                                                 prefix->v_blocks[blk], n_prefix, mask)
                         : attention(qh, kh, vh, mask);
    Tensor merged = merge_heads(attn);

    int row = 0;
    for (std::size_t i = 0; i < groups.size(); ++i) {
      const std::string p = block_prefix(blk, groups[i].branch) + "attn/";
      Tensor out_g = slice_rows(merged, row, row + groups[i].n_tokens);
      row += groups[i].n_tokens;
      h[i] = add(h[i], affine(out_g, g.param(p + "out/w"), g.param(p + "out/b")));
    }

    // Cross-attention to the instruction tokens (shared K/V projections).
    const std::string sp = shared_prefix(blk);
    Tensor ik = split_heads(affine(ctx.instr_emb, g.param(sp + "k/w"), g.param(sp + "k/b")),
                            cfg.n_heads);
    Tensor iv = split_heads(affine(ctx.instr_emb, g.param(sp + "v/w"), g.param(sp + "v/b")),
                            cfg.n_heads);
    for (std::size_t i = 0; i < groups.size(); ++i) {
      const std::string p = block_prefix(blk, groups[i].branch) + "cross/";
      Tensor u = layer_norm(h[i], g.param(p + "norm/gamma"), g.param(p + "norm/beta"));
      Tensor cq = split_heads(affine(u, g.param(p + "q/w"), g.param(p + "q/b")), cfg.n_heads);
      BoolMatrix cm(groups[i].n_tokens, cfg.n_instr, true);
      Tensor co = merge_heads(attention(cq, ik, iv, cm));
      h[i] = add(h[i], affine(co, g.param(p + "out/w"), g.param(p + "out/b")));
    }

    // Per-branch MLP with its own modulation.
    for (std::size_t i = 0; i < groups.size(); ++i) {
      const std::string p = block_prefix(blk, groups[i].branch) + "mlp/";
      Tensor u = modulated_norm(g, h[i], p, ctx.t_feat[i]);
      Tensor mid = gelu(affine(u, g.param(p + "fc1/w"), g.param(p + "fc1/b")));
      h[i] = add(h[i], affine(mid, g.param(p + "fc2/w"), g.param(p + "fc2/b")));
    }
  }

  SeqResult res;
  res.hidden = h;
  res.velocity.resize(groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (!groups[i].want_velocity) continue;
    const std::string hp = groups[i].branch == Branch::Video ? "head/video/" : "head/action/";
    Tensor u = layer_norm(h[i], g.param(hp + "norm/gamma"), g.param(hp + "norm/beta"));
    res.velocity[i] = affine(u, g.param(hp + "w"), g.param(hp + "b"));
  }

  if (capture) {
    Tensor all = h.size() == 1 ? h[0] : concat_rows(h);
    capture->final_hidden = all.to_vector();
    capture->n_ctx = n_present;
    capture->n_heads = cfg.n_heads;
    capture->d_head = cfg.d_head();
    capture->n_blocks = cfg.n_blocks;
    capture->model_tag = &model;
  }
  return res;
}

TrainOutputs forward_train(Graph& g, const WamModel& model, const std::vector<double>& clean,
                           const std::vector<double>& future_noisy,
                           const std::vector<double>& action_noisy, double t_vid, double t_act,
                           int instr_row, MaskMode mode, PassCounters* counters) {
  const TokenLayout& L = model.cfg.layout;
  if (mode != MaskMode::TrainFastWam && mode != MaskMode::TrainJoint) {
    throw ConfigError("forward_train: mode must be a training mask");
  }
  const bool has_future = !future_noisy.empty();
  if (!has_future && mode == MaskMode::TrainJoint) {
    throw ConfigError("forward_train: train_joint requires future tokens");
  }
  if (t_act <= 0.0 || t_act >= 1.0 || (has_future && (t_vid <= 0.0 || t_vid >= 1.0))) {
    throw ConfigError("forward_train: t must lie strictly inside (0,1)");
  }

  std::vector<GroupSpec> groups;
  groups.push_back({Branch::Video, &clean, L.n_clean, 0.0, 0, false});
  if (has_future) {
    groups.push_back({Branch::Video, &future_noisy, L.n_future, t_vid, L.n_clean, true});
  }
  groups.push_back({Branch::Action, &action_noisy, L.n_action, t_act, 0, true});

  // With the future group omitted (no-co-train), the fast-wam rules
  // restricted to (C,A) are exactly the infer_fastwam mask.
  const MaskMode mask_mode = has_future ? mode : MaskMode::InferFastWam;
  BoolMatrix mask = build_mask(mask_mode, L);

  SeqResult res = run_sequence(g, model, groups, mask, instr_row, counters);
  TrainOutputs out;
  out.clean_hidden = res.hidden[0];
  if (has_future) {
    out.v_video = res.velocity[1];
    out.v_action = res.velocity[2];
  } else {
    out.v_action = res.velocity[1];
  }
  return out;
}

namespace {

ContextCache encode_groups(const WamModel& model, const std::vector<GroupSpec>& groups,
                           const BoolMatrix& mask, int instr_row, PassCounters* counters) {
  Graph g(model.params, /*grad_enabled=*/false);
  ContextCache cache;
  run_sequence(g, model, groups, mask, instr_row, counters, &cache);
  return cache;
}

}  // namespace

ContextCache encode_context(const WamModel& model, const std::vector<double>& clean_tokens,
                            int instr_row, PassCounters* counters) {
  const TokenLayout& L = model.cfg.layout;
  std::vector<GroupSpec> groups = {{Branch::Video, &clean_tokens, L.n_clean, 0.0, 0, false}};
  BoolMatrix mask(L.n_clean, L.n_clean, true);  // C attends to C only
  return encode_groups(model, groups, mask, instr_row, counters);
}

ContextCache encode_context_with_future(const WamModel& model, const std::vector<double>& clean,
                                        const std::vector<double>& future_latents, int instr_row,
                                        PassCounters* counters) {
  const TokenLayout& L = model.cfg.layout;
  std::vector<GroupSpec> groups = {
      {Branch::Video, &clean, L.n_clean, 0.0, 0, false},
      {Branch::Video, &future_latents, L.n_future, 0.0, L.n_clean, false},
  };
  // Same connectivity as the C/F part of infer_idm_action: C->C, F->C,F.
  const int total = L.n_clean + L.n_future;
  BoolMatrix mask(total, total);
  for (int r = 0; r < total; ++r) {
    for (int c = 0; c < total; ++c) {
      if (r < L.n_clean) {
        mask.set(r, c, c < L.n_clean);
      } else {
        mask.set(r, c, true);
      }
    }
  }
  return encode_groups(model, groups, mask, instr_row, counters);
}

std::vector<double> action_forward_cached(const WamModel& model, const ContextCache& cache,
                                          const std::vector<double>& action_noisy, double t_act,
                                          int instr_row, PassCounters* counters) {
  const TokenLayout& L = model.cfg.layout;
  if (cache.model_tag != &model) {
    throw ConfigError("action_forward_cached: cache was built by a different model");
  }
  Graph g(model.params, /*grad_enabled=*/false);
  std::vector<GroupSpec> groups = {{Branch::Action, &action_noisy, L.n_action, t_act, 0, true}};
  // Action queries may attend to every cached context key and to each
  // other; in combined-key order [context | action] this is an all-true
  // mask, matching A->C,A (fast-wam) or A->C,F,A (idm) connectivity.
  BoolMatrix mask(L.n_action, cache.n_ctx + L.n_action, true);
  SeqResult res = run_sequence(g, model, groups, mask, instr_row, counters, nullptr, &cache);
  return res.velocity[0].to_vector();
}

std::vector<double> video_forward(const WamModel& model, const std::vector<double>& clean,
                                  const std::vector<double>& future_noisy, double t_vid,
                                  int instr_row, PassCounters* counters) {
  const TokenLayout& L = model.cfg.layout;
  Graph g(model.params, /*grad_enabled=*/false);
  std::vector<GroupSpec> groups = {
      {Branch::Video, &clean, L.n_clean, 0.0, 0, false},
      {Branch::Video, &future_noisy, L.n_future, t_vid, L.n_clean, true},
  };
  BoolMatrix mask = build_mask(MaskMode::InferVideoOnly, L);
  SeqResult res = run_sequence(g, model, groups, mask, instr_row, counters);
  return res.velocity[1].to_vector();
}

Tensor forward_video_train(Graph& g, const WamModel& model, const std::vector<double>& clean,
                           const std::vector<double>& future_noisy, double t_vid, int instr_row,
                           PassCounters* counters) {
  const TokenLayout& L = model.cfg.layout;
  if (t_vid <= 0.0 || t_vid >= 1.0) {
    throw ConfigError("forward_video_train: t must lie strictly inside (0,1)");
  }
  std::vector<GroupSpec> groups = {
      {Branch::Video, &clean, L.n_clean, 0.0, 0, false},
      {Branch::Video, &future_noisy, L.n_future, t_vid, L.n_clean, true},
  };
  BoolMatrix mask = build_mask(MaskMode::InferVideoOnly, L);
  return run_sequence(g, model, groups, mask, instr_row, counters).velocity[1];
}

Tensor forward_idm_action_train(Graph& g, const WamModel& model, const std::vector<double>& clean,
                                const std::vector<double>& future_ctx,
                                const std::vector<double>& action_noisy, double t_act,
                                int instr_row, PassCounters* counters) {
  const TokenLayout& L = model.cfg.layout;
  if (t_act <= 0.0 || t_act >= 1.0) {
    throw ConfigError("forward_idm_action_train: t must lie strictly inside (0,1)");
  }
  std::vector<GroupSpec> groups = {
      {Branch::Video, &clean, L.n_clean, 0.0, 0, false},
      {Branch::Video, &future_ctx, L.n_future, 0.0, L.n_clean, false},
      {Branch::Action, &action_noisy, L.n_action, t_act, 0, true},
  };
  BoolMatrix mask = build_mask(MaskMode::InferIdmAction, L);
  return run_sequence(g, model, groups, mask, instr_row, counters).velocity[2];
}

JointVelocities joint_forward(const WamModel& model, const std::vector<double>& clean,
                              const std::vector<double>& future_noisy,
                              const std::vector<double>& action_noisy, double t, int instr_row,
                              PassCounters* counters) {
  const TokenLayout& L = model.cfg.layout;
  Graph g(model.params, /*grad_enabled=*/false);
  std::vector<GroupSpec> groups = {
      {Branch::Video, &clean, L.n_clean, 0.0, 0, false},
      {Branch::Video, &future_noisy, L.n_future, t, L.n_clean, true},
      {Branch::Action, &action_noisy, L.n_action, t, 0, true},
  };
  BoolMatrix mask = build_mask(MaskMode::TrainJoint, L);
  SeqResult res = run_sequence(g, model, groups, mask, instr_row, counters);
  return {res.velocity[1].to_vector(), res.velocity[2].to_vector()};
}

}  // namespace fastwam
