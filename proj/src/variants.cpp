#include "fastwam/variants.hpp"

#include <chrono>
#include <cmath>
#include <thread>

#include "fastwam/errors.hpp"

namespace fastwam {

VariantKind variant_from_string(const std::string& s) {
  if (s == "fastwam") return VariantKind::FastWam;
  if (s == "joint") return VariantKind::Joint;
  if (s == "idm") return VariantKind::Idm;
  if (s == "nocotrain") return VariantKind::NoCoTrain;
  throw ConfigError("unknown variant: " + s);
}

std::string to_string(VariantKind kind) {
  switch (kind) {
    case VariantKind::FastWam: return "fastwam";
    case VariantKind::Joint: return "joint";
    case VariantKind::Idm: return "idm";
    case VariantKind::NoCoTrain: return "nocotrain";
  }
  throw ConfigError("unknown variant kind");
}

void VariantConfig::validate() const {
  if (kind == VariantKind::NoCoTrain && lambda != 0.0) {
    throw ConfigError("VariantConfig: nocotrain requires lambda == 0");
  }
  if (lambda < 0.0 || !std::isfinite(lambda)) throw ConfigError("VariantConfig: bad lambda");
  if (idm_noise_aug_prob < 0.0 || idm_noise_aug_prob > 1.0 || cfg_dropout_prob < 0.0 ||
      cfg_dropout_prob > 1.0) {
    throw ConfigError("VariantConfig: probabilities must lie in [0,1]");
  }
  if (idm_aug_t_max <= 0.0 || idm_aug_t_max >= 1.0) {
    throw ConfigError("VariantConfig: idm_aug_t_max must lie in (0,1)");
  }
  if (n_steps_action < 1 || n_steps_video < 1) {
    throw ConfigError("VariantConfig: step counts must be >= 1");
  }
  if (t_std <= 0.0) throw ConfigError("VariantConfig: t_std must be positive");
}

VariantConfig VariantConfig::for_kind(VariantKind k) {
  VariantConfig vc;
  vc.kind = k;
  if (k == VariantKind::NoCoTrain) vc.lambda = 0.0;
  return vc;
}

SampleNoise draw_sample_noise(Pcg32& rng, const VariantConfig& vc, const ModelConfig& mc) {
  const TokenLayout& L = mc.layout;
  SampleNoise n;
  const bool wants_video = vc.kind != VariantKind::NoCoTrain;
  // Fixed draw order per variant: t_vid, t_act, eps_vid, eps_act,
  // cfg dropout, then idm augmentation.
  if (wants_video) n.t_vid = sample_t_logitnormal(rng, vc.t_mean, vc.t_std);
  n.t_act = sample_t_logitnormal(rng, vc.t_mean, vc.t_std);
  if (wants_video) {
    n.eps_vid.resize(static_cast<std::size_t>(L.n_future) * mc.d_patch);
    for (auto& v : n.eps_vid) v = rng.normal();
  }
  n.eps_act.resize(static_cast<std::size_t>(L.n_action) * mc.action_dim);
  for (auto& v : n.eps_act) v = rng.normal();
  n.cfg_drop = rng.next_double01() < vc.cfg_dropout_prob;
  if (vc.kind == VariantKind::Idm) {
    n.idm_aug = rng.next_double01() < vc.idm_noise_aug_prob;
    n.idm_t_aug = rng.uniform(0.0, vc.idm_aug_t_max);
    n.idm_eps_aug.resize(n.eps_vid.size());
    for (auto& v : n.idm_eps_aug) v = rng.normal();
  }
  return n;
}

namespace {

std::vector<double> interpolate(const std::vector<double>& y, const std::vector<double>& eps,
                                double t) {
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = (1.0 - t) * y[i] + t * eps[i];
  return out;
}

std::vector<double> velocity_target(const std::vector<double>& y, const std::vector<double>& eps) {
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = eps[i] - y[i];
  return out;
}

std::vector<uint8_t> expand_valid(const std::vector<uint8_t>& per_step, int action_dim) {
  std::vector<uint8_t> out(per_step.size() * action_dim);
  for (std::size_t h = 0; h < per_step.size(); ++h) {
    for (int a = 0; a < action_dim; ++a) out[h * action_dim + a] = per_step[h];
  }
  return out;
}

}  // namespace

SampleLoss build_sample_loss(Graph& g, const WamModel& model, const Chunk& chunk,
                             const VariantConfig& vc, const SampleNoise& noise) {
  vc.validate();
  const ModelConfig& mc = model.cfg;
  const int instr_row = noise.cfg_drop ? model.null_instr_row() : chunk.task;
  const std::vector<uint8_t> valid = expand_valid(chunk.action_valid, mc.action_dim);

  const std::vector<double> act_t = interpolate(chunk.actions, noise.eps_act, noise.t_act);
  const std::vector<double> act_target = velocity_target(chunk.actions, noise.eps_act);

  SampleLoss out;
  switch (vc.kind) {
    case VariantKind::FastWam:
    case VariantKind::Joint: {
      const std::vector<double> vid_t = interpolate(chunk.future, noise.eps_vid, noise.t_vid);
      const std::vector<double> vid_target = velocity_target(chunk.future, noise.eps_vid);
      const MaskMode mode =
          vc.kind == VariantKind::FastWam ? MaskMode::TrainFastWam : MaskMode::TrainJoint;
      TrainOutputs o = forward_train(g, model, chunk.clean, vid_t, act_t, noise.t_vid, noise.t_act,
                                     instr_row, mode);
      out.act = fm_loss(o.v_action, act_target, &valid);
      out.vid = fm_loss(o.v_video, vid_target);
      out.total = joint_loss(out.act, out.vid, vc.lambda);
      break;
    }
    case VariantKind::NoCoTrain: {
      TrainOutputs o = forward_train(g, model, chunk.clean, {}, act_t, 0.5, noise.t_act, instr_row,
                                     MaskMode::TrainFastWam);
      out.act = fm_loss(o.v_action, act_target, &valid);
      out.total = out.act;
      break;
    }
    case VariantKind::Idm: {
      // (a) video sub-step on noised targets
      const std::vector<double> vid_t = interpolate(chunk.future, noise.eps_vid, noise.t_vid);
      const std::vector<double> vid_target = velocity_target(chunk.future, noise.eps_vid);
      Tensor v_vid = forward_video_train(g, model, chunk.clean, vid_t, noise.t_vid, instr_row);
      out.vid = fm_loss(v_vid, vid_target);
      // (b) action sub-step conditioned on clean ground-truth latents,
      // noise-augmented with probability idm_noise_aug_prob
      std::vector<double> ctx = chunk.future;
      if (noise.idm_aug) ctx = interpolate(chunk.future, noise.idm_eps_aug, noise.idm_t_aug);
      Tensor v_act =
          forward_idm_action_train(g, model, chunk.clean, ctx, act_t, noise.t_act, instr_row);
      out.act = fm_loss(v_act, act_target, &valid);
      out.total = joint_loss(out.act, out.vid, vc.lambda);
      break;
    }
  }
  if (!std::isfinite(out.total.scalar_value())) {
    throw NumericError("train loss is non-finite (variant " + to_string(vc.kind) + ")");
  }
  return out;
}

StepLosses train_step(const WamModel& model, const std::vector<Chunk>& batch,
                      const VariantConfig& vc, Pcg32& rng, std::vector<double>& grad_sink,
                      int threads) {
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  if (grad_sink.size() != model.params.total_size()) {
    throw DimensionError("train_step: grad sink size mismatch");
  }
  const int B = static_cast<int>(batch.size());
  const int T = std::max(1, std::min(threads, B));

  std::vector<SampleNoise> noise(B);
  for (int s = 0; s < B; ++s) noise[s] = draw_sample_noise(rng, vc, model.cfg);

  std::vector<std::vector<double>> worker_grads(T);
  std::vector<StepLosses> sample_losses(B);
  std::vector<std::string> worker_errors(T);

  auto worker = [&](int w) {
    try {
      worker_grads[w].assign(model.params.total_size(), 0.0);
      for (int s = w; s < B; s += T) {
        Graph g(model.params, /*grad_enabled=*/true);
        SampleLoss loss = build_sample_loss(g, model, batch[s], vc, noise[s]);
        loss.total.backward();
        g.accumulate_param_grads(worker_grads[w]);
        sample_losses[s] = {loss.total.scalar_value(), loss.act.scalar_value(),
                            loss.vid.defined() ? loss.vid.scalar_value() : 0.0};
      }
    } catch (const std::exception& e) {
      worker_errors[w] = e.what();
    }
  };

  if (T == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(T);
    for (int w = 0; w < T; ++w) pool.emplace_back(worker, w);
    for (auto& th : pool) th.join();
  }
  for (const auto& err : worker_errors) {
    if (!err.empty()) throw NumericError(err);
  }

  // Deterministic reduction: workers in index order, then scale by 1/B.
  const double inv_b = 1.0 / static_cast<double>(B);
  for (int w = 0; w < T; ++w) {
    for (std::size_t i = 0; i < grad_sink.size(); ++i) grad_sink[i] += worker_grads[w][i];
  }
  for (auto& gv : grad_sink) gv *= inv_b;

  StepLosses mean;
  for (int s = 0; s < B; ++s) {
    mean.total += sample_losses[s].total;
    mean.act += sample_losses[s].act;
    mean.vid += sample_losses[s].vid;
  }
  mean.total *= inv_b;
  mean.act *= inv_b;
  mean.vid *= inv_b;
  return mean;
}

namespace {

double clamp11(double v) { return std::min(1.0, std::max(-1.0, v)); }

std::vector<double> draw_noise(Pcg32& rng, std::size_t n) {
  std::vector<double> out(n);
  for (auto& v : out) v = rng.normal();
  return out;
}

// Keeps a caller-supplied schedule when its step count matches,
// otherwise falls back to the uniform grid at the variant's step count.
SamplerConfig schedule_for(int steps, const SamplerConfig& sampler) {
  if (sampler.n_steps == steps) return sampler;
  return SamplerConfig::uniform(steps, sampler.cfg_scale, sampler.rng_seed);
}

}  // namespace

InferResult infer(const WamModel& model, const Frame& obs, int task, const VariantConfig& vc,
                  const SamplerConfig& sampler, Pcg32& rng, int patch_size) {
  vc.validate();
  sampler.validate();
  const ModelConfig& mc = model.cfg;
  const TokenLayout& L = mc.layout;
  const bool use_cfg = sampler.cfg_scale != 1.0;
  const int null_row = model.null_instr_row();

  const auto start = std::chrono::steady_clock::now();
  PassCounters counters;
  InferResult res;

  const std::vector<double> clean = patchify(obs, patch_size);

  switch (vc.kind) {
    case VariantKind::FastWam:
    case VariantKind::NoCoTrain: {
      ContextCache cache = encode_context(model, clean, task, &counters);
      ContextCache cache_null;
      if (use_cfg) cache_null = encode_context(model, clean, null_row, &counters);

      std::vector<double> init = draw_noise(rng, static_cast<std::size_t>(L.n_action) * mc.action_dim);
      SamplerConfig action_cfg = schedule_for(vc.n_steps_action, sampler);
      res.actions = euler_sample(
          init,
          [&](const std::vector<double>& y, double t) {
            auto v_cond = action_forward_cached(model, cache, y, t, task, &counters);
            if (!use_cfg) return v_cond;
            auto v_un = action_forward_cached(model, cache_null, y, t, null_row, &counters);
            return cfg_combine(v_cond, v_un, sampler.cfg_scale);
          },
          action_cfg);
      break;
    }
    case VariantKind::Joint: {
      const std::size_t n_vid = static_cast<std::size_t>(L.n_future) * mc.d_patch;
      const std::size_t n_act = static_cast<std::size_t>(L.n_action) * mc.action_dim;
      std::vector<double> init = draw_noise(rng, n_vid);
      std::vector<double> init_act = draw_noise(rng, n_act);
      init.insert(init.end(), init_act.begin(), init_act.end());

      SamplerConfig joint_cfg = schedule_for(vc.n_steps_action, sampler);
      std::vector<double> out = euler_sample(
          init,
          [&](const std::vector<double>& y, double t) {
            std::vector<double> fut(y.begin(), y.begin() + n_vid);
            std::vector<double> act(y.begin() + n_vid, y.end());
            JointVelocities v = joint_forward(model, clean, fut, act, t, task, &counters);
            std::vector<double> joined = v.v_video;
            joined.insert(joined.end(), v.v_action.begin(), v.v_action.end());
            if (!use_cfg) return joined;
            JointVelocities vu = joint_forward(model, clean, fut, act, t, null_row, &counters);
            std::vector<double> joined_u = vu.v_video;
            joined_u.insert(joined_u.end(), vu.v_action.begin(), vu.v_action.end());
            return cfg_combine(joined, joined_u, sampler.cfg_scale);
          },
          joint_cfg);
      res.video_pred.assign(out.begin(), out.begin() + n_vid);
      res.actions.assign(out.begin() + n_vid, out.end());
      res.has_video = true;
      break;
    }
    case VariantKind::Idm: {
      const std::size_t n_vid = static_cast<std::size_t>(L.n_future) * mc.d_patch;
      // Stage 1: denoise future latents.
      std::vector<double> vid_init = draw_noise(rng, n_vid);
      SamplerConfig vid_cfg = schedule_for(vc.n_steps_video, sampler);
      std::vector<double> z_gen = euler_sample(
          vid_init,
          [&](const std::vector<double>& y, double t) {
            auto v_cond = video_forward(model, clean, y, t, task, &counters);
            if (!use_cfg) return v_cond;
            auto v_un = video_forward(model, clean, y, t, null_row, &counters);
            return cfg_combine(v_cond, v_un, sampler.cfg_scale);
          },
          vid_cfg);

      // Stage 2: encode generated latents as clean context, denoise actions.
      ContextCache cache = encode_context_with_future(model, clean, z_gen, task, &counters);
      ContextCache cache_null;
      if (use_cfg) cache_null = encode_context_with_future(model, clean, z_gen, null_row, &counters);

      std::vector<double> init = draw_noise(rng, static_cast<std::size_t>(L.n_action) * mc.action_dim);
      SamplerConfig action_cfg = schedule_for(vc.n_steps_action, sampler);
      res.actions = euler_sample(
          init,
          [&](const std::vector<double>& y, double t) {
            auto v_cond = action_forward_cached(model, cache, y, t, task, &counters);
            if (!use_cfg) return v_cond;
            auto v_un = action_forward_cached(model, cache_null, y, t, null_row, &counters);
            return cfg_combine(v_cond, v_un, sampler.cfg_scale);
          },
          action_cfg);
      res.video_pred = std::move(z_gen);
      res.has_video = true;
      break;
    }
  }

  for (auto& a : res.actions) a = clamp11(a);

  const auto end = std::chrono::steady_clock::now();
  res.report.token_passes = counters.token_passes;
  res.report.forward_passes = counters.forward_passes;
  res.report.max_seq_len = counters.max_seq_len;
  res.report.wall_ms = std::chrono::duration<double, std::milli>(end - start).count();
  return res;
}

uint64_t count_token_passes(const VariantConfig& vc, const TokenLayout& layout) {
  const uint64_t c = layout.n_clean, f = layout.n_future, a = layout.n_action;
  switch (vc.kind) {
    case VariantKind::FastWam:
    case VariantKind::NoCoTrain:
      return c + static_cast<uint64_t>(vc.n_steps_action) * a;
    case VariantKind::Joint:
      return static_cast<uint64_t>(vc.n_steps_action) * (c + f + a);
    case VariantKind::Idm:
      return static_cast<uint64_t>(vc.n_steps_video) * (c + f) + (c + f) +
             static_cast<uint64_t>(vc.n_steps_action) * a;
  }
  throw ConfigError("count_token_passes: unknown variant");
}

}  // namespace fastwam
