#include "fastwam/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "fastwam/errors.hpp"
#include "fastwam/toyworld.hpp"

namespace fastwam {

namespace {

constexpr char kOptMagic[4] = {'F', 'W', 'O', 'P'};
constexpr uint32_t kOptVersion = 1;

void write_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw IoError("trainer state: truncated u64");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void TrainerState::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("trainer state: cannot open " + path + " for writing");
  os.write(kOptMagic, 4);
  write_u64(os, kOptVersion);
  write_u64(os, opt.step);
  write_u64(os, rng_state);
  write_u64(os, rng_inc);
  write_u64(os, rng_has_spare ? 1 : 0);
  os.write(reinterpret_cast<const char*>(&rng_spare), sizeof(double));
  write_u64(os, opt.m.size());
  os.write(reinterpret_cast<const char*>(opt.m.data()),
           static_cast<std::streamsize>(opt.m.size() * sizeof(double)));
  os.write(reinterpret_cast<const char*>(opt.v.data()),
           static_cast<std::streamsize>(opt.v.size() * sizeof(double)));
  if (!os) throw IoError("trainer state: write failure on " + path);
}

TrainerState TrainerState::load(const std::string& path, std::size_t expect_size) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("trainer state: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kOptMagic, 4) != 0) {
    throw IoError("trainer state: bad magic in " + path);
  }
  if (read_u64(is) != kOptVersion) throw IoError("trainer state: unsupported version");
  TrainerState st;
  st.opt.step = read_u64(is);
  st.rng_state = read_u64(is);
  st.rng_inc = read_u64(is);
  st.rng_has_spare = read_u64(is) != 0;
  is.read(reinterpret_cast<char*>(&st.rng_spare), sizeof(double));
  const uint64_t n = read_u64(is);
  if (n != expect_size) {
    throw ConfigError("trainer state: moment size " + std::to_string(n) +
                      " does not match model with " + std::to_string(expect_size) + " params");
  }
  st.opt.m.resize(n);
  st.opt.v.resize(n);
  is.read(reinterpret_cast<char*>(st.opt.m.data()), static_cast<std::streamsize>(n * sizeof(double)));
  is.read(reinterpret_cast<char*>(st.opt.v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw IoError("trainer state: truncated moments in " + path);
  return st;
}

void save_checkpoint(const std::string& prefix, const ParamStore& params,
                     const TrainerState& state, const TrainConfig& cfg) {
  params.save(prefix + ".fwam");
  state.save(prefix + ".opt");
  cfg.save(prefix + ".cfg");
}

LoadedCheckpoint load_checkpoint(const std::string& prefix) {
  TrainConfig cfg = TrainConfig::load(prefix + ".cfg");
  ParamStore params = ParamStore::load(prefix + ".fwam");
  WamModel model = WamModel::build(cfg.model_config(), cfg.seed);
  if (params.total_size() != model.params.total_size()) {
    throw ConfigError("checkpoint: parameter count mismatch for " + prefix);
  }
  for (auto& [path, e] : model.params.entries()) {
    const auto& loaded = params.at(path);
    if (loaded.shape != e.shape) throw ConfigError("checkpoint: shape mismatch at " + path);
    e.value = loaded.value;
  }
  LoadedCheckpoint out{std::move(cfg), std::move(model),
                       TrainerState::load(prefix + ".opt", params.total_size())};
  return out;
}

TrainResult train(const TrainConfig& cfg, const std::optional<std::string>& resume_from) {
  cfg.validate();
  std::filesystem::create_directories(cfg.out_dir);

  WorldConfig geom;
  std::vector<EpisodeRecord> episodes;
  try {
    episodes = load_dataset(cfg.data_path, &geom);
  } catch (const IoError& e) {
    throw IoError(std::string("train: dataset missing or unreadable: ") + e.what());
  }
  if (episodes.empty()) throw IoError("train: dataset " + cfg.data_path + " has no episodes");
  if (geom.frame_px != cfg.world.frame_px || geom.num_tasks != cfg.world.num_tasks) {
    throw ConfigError("train: dataset geometry does not match config");
  }

  WamModel model = WamModel::build(cfg.model_config(), cfg.seed);
  TrainerState state;
  state.opt.init(model.params.total_size());
  Pcg32 rng(splitmix64(cfg.seed), /*seq=*/0x7e57);

  uint64_t start_step = 0;
  if (resume_from) {
    LoadedCheckpoint ck = load_checkpoint(*resume_from);
    auto lhs = ck.cfg.to_kv(), rhs = cfg.to_kv();
    lhs.erase("out_dir");
    rhs.erase("out_dir");
    if (lhs != rhs) {
      throw ConfigError("train: resume config does not match checkpoint config");
    }
    model = std::move(ck.model);
    state = std::move(ck.state);
    rng.restore(state.rng_state, state.rng_inc, state.rng_has_spare, state.rng_spare);
    start_step = state.opt.step;
  }

  std::ofstream log(cfg.out_dir + "/metrics.jsonl", resume_from ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("train: cannot open metrics log in " + cfg.out_dir);

  const AdamWConfig adamw = cfg.adamw_config();
  TrainResult result;
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<double> grads(model.params.total_size());
  for (uint64_t step = start_step; step < static_cast<uint64_t>(cfg.total_steps); ++step) {
    // Batch selection consumes the same stream as the noise draws, so the
    // whole data order is captured by the rng state.
    std::vector<Chunk> batch;
    batch.reserve(cfg.batch_size);
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& ep = episodes[rng.next_u32() % episodes.size()];
      const int start = static_cast<int>(rng.next_u32() % ep.actions.size());
      batch.push_back(extract_chunk(ep, start, cfg.chunk, cfg.world));
    }

    std::fill(grads.begin(), grads.end(), 0.0);
    StepLosses losses;
    try {
      losses = train_step(model, batch, cfg.variant, rng, grads, cfg.threads);
    } catch (const NumericError& e) {
      throw NumericError("train: aborted at step " + std::to_string(step) + ": " + e.what());
    }
    const double grad_norm = optimize_step(model.params, grads, state.opt, adamw, step);
    const double lr_now = cfg.lr * cosine_lr_multiplier(step, adamw.total_steps);

    log << "{\"step\":" << step << ",\"loss_total\":" << losses.total
        << ",\"loss_act\":" << losses.act << ",\"loss_vid\":" << losses.vid
        << ",\"lr\":" << lr_now << ",\"grad_norm\":" << grad_norm << "}\n";
    result.losses.push_back(losses);

    const bool last = step + 1 == static_cast<uint64_t>(cfg.total_steps);
    if ((step + 1) % static_cast<uint64_t>(cfg.checkpoint_every) == 0 && !last) {
      state.rng_state = rng.state();
      state.rng_inc = rng.inc();
      state.rng_has_spare = rng.has_spare();
      state.rng_spare = rng.spare();
      save_checkpoint(cfg.out_dir + "/ckpt_step" + std::to_string(step + 1), model.params, state,
                      cfg);
    }
  }

  state.rng_state = rng.state();
  state.rng_inc = rng.inc();
  state.rng_has_spare = rng.has_spare();
  state.rng_spare = rng.spare();
  result.checkpoint_prefix = cfg.out_dir + "/ckpt_final";
  save_checkpoint(result.checkpoint_prefix, model.params, state, cfg);

  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace fastwam
