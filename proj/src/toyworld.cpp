#include "fastwam/toyworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "fastwam/errors.hpp"

namespace fastwam {

double Vec2::norm() const { return std::sqrt(x * x + y * y); }

namespace {

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }
double clamp11(double v) { return std::min(1.0, std::max(-1.0, v)); }

Vec2 clamp_box01(Vec2 p) { return {clamp01(p.x), clamp01(p.y)}; }

// noinline: GCC 11 at -O3 has been seen to elide the narrowing round-trip
// once this is inlined into the episode loop.
__attribute__((noinline)) double f32_round(double v) {
  volatile float narrowed = static_cast<float>(v);
  return static_cast<double>(narrowed);
}

// Goal anchor per task: left, right, top, bottom (y grows downward in
// pixel space).
Vec2 goal_anchor(int task) {
  switch (task % 4) {
    case 0: return {0.15, 0.5};
    case 1: return {0.85, 0.5};
    case 2: return {0.5, 0.15};
    default: return {0.5, 0.85};
  }
}

}  // namespace

uint64_t episode_seed(uint64_t base_seed, int task, uint64_t index) {
  uint64_t mixed = splitmix64(base_seed);
  mixed = splitmix64(mixed ^ (static_cast<uint64_t>(task) << 56) ^ index);
  return mixed;
}

WorldState init_state(uint64_t ep_seed, TaskId task, const WorldConfig& cfg) {
  if (task.id < 0 || task.id >= cfg.num_tasks) {
    throw ConfigError("init_state: task id " + std::to_string(task.id) + " out of range [0," +
                      std::to_string(cfg.num_tasks) + ")");
  }
  Pcg32 rng(ep_seed, /*seq=*/0x7457);

  WorldState s;
  Vec2 anchor = goal_anchor(task.id);
  s.goal = clamp_box01({anchor.x + rng.uniform(-0.08, 0.08), anchor.y + rng.uniform(-0.08, 0.08)});
  s.agent = {rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)};
  // Block placement rejects starts that are already solved or that begin
  // in contact; rejection is driven by the same stream, so it stays
  // deterministic.
  for (int tries = 0; tries < 100; ++tries) {
    s.block = {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)};
    if ((s.block - s.goal).norm() >= 0.25 && (s.block - s.agent).norm() >= 0.12) break;
  }
  s.step_index = 0;
  return s;
}

WorldState step(const WorldState& s, Vec2 action, const WorldConfig& cfg, int* clamp_warnings) {
  if (!std::isfinite(action.x) || !std::isfinite(action.y)) {
    throw InputError("step: non-finite action");
  }
  Vec2 a = {clamp11(action.x), clamp11(action.y)};
  if ((a.x != action.x || a.y != action.y) && clamp_warnings) ++(*clamp_warnings);

  WorldState out = s;
  Vec2 agent_new = clamp_box01(s.agent + a * cfg.v_max);
  Vec2 disp = agent_new - s.agent;

  // Contact is tested at the pre-move agent position; the block is pushed
  // by the displacement component along the agent->block direction,
  // pulling is ignored.
  Vec2 to_block = s.block - s.agent;
  double dist = to_block.norm();
  if (dist > 1e-12 && dist <= cfg.contact_radius) {
    Vec2 u = to_block * (1.0 / dist);
    double push = disp.dot(u);
    if (push > 0.0) out.block = clamp_box01(s.block + u * push);
  }
  out.agent = agent_new;
  out.step_index = s.step_index + 1;
  return out;
}

Frame render(const WorldState& s, const WorldConfig& cfg) {
  Frame f;
  f.h = cfg.frame_px;
  f.w = cfg.frame_px;
  f.px.assign(static_cast<std::size_t>(f.h) * f.w, 0.0);

  auto paint = [&](Vec2 p, double intensity) {
    int cx = std::min(f.w - 1, std::max(0, static_cast<int>(std::floor(p.x * f.w))));
    int cy = std::min(f.h - 1, std::max(0, static_cast<int>(std::floor(p.y * f.h))));
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx) {
        int x = cx + dx, y = cy + dy;
        if (x >= f.w || y >= f.h) continue;
        double& v = f.px[static_cast<std::size_t>(y) * f.w + x];
        v = std::max(v, intensity);
      }
    }
  };
  paint(s.goal, cfg.blob_goal);
  paint(s.agent, cfg.blob_agent);
  paint(s.block, cfg.blob_block);
  return f;
}

bool is_success(const WorldState& s, TaskId /*task*/, const WorldConfig& cfg) {
  return (s.block - s.goal).norm() <= cfg.success_radius;
}

Vec2 expert_action(const WorldState& s, TaskId task, const WorldConfig& cfg) {
  if (is_success(s, task, cfg)) return {0.0, 0.0};

  Vec2 to_goal = s.goal - s.block;
  double dist_goal = to_goal.norm();
  Vec2 u = to_goal * (1.0 / dist_goal);  // push direction
  Vec2 perp = {-u.y, u.x};

  Vec2 rel = s.agent - s.block;
  double along = rel.dot(u);   // >0: agent on the goal side of the block
  double lat = rel.dot(perp);  // signed lateral offset from the push line
  double r = rel.norm();

  const bool behind_ok = along < -0.02 && std::fabs(lat) < 0.05;

  Vec2 move;
  if (behind_ok) {
    // Push phase: drive at a point just inside the block's back face.
    move = (s.block - u * 0.02) - s.agent;
  } else if (r > 0.18) {
    // Far away: head straight for the stand-off point behind the block.
    move = (s.block - u * 0.12) - s.agent;
  } else {
    // Near the block but not behind it: orbit at radius 0.12 toward the
    // back, staying on the current side so the block is never nudged.
    double side = lat >= 0.0 ? 1.0 : -1.0;
    Vec2 tang = (u * (-std::fabs(lat)) + perp * (side * along)) * (1.0 / r);
    Vec2 radial = rel * (1.0 / r);
    double r_err = 0.12 - r;
    move = tang + radial * (r_err * 6.0);
  }

  // Proportional command, clipped to unit speed.
  Vec2 raw = move * (1.0 / cfg.v_max);
  double n = raw.norm();
  if (n > 1.0) raw = raw * (1.0 / n);
  return {clamp11(raw.x), clamp11(raw.y)};
}

EpisodeRecord generate_episode(uint64_t seed, TaskId task, int max_steps, const WorldConfig& cfg) {
  if (max_steps < 1) throw ConfigError("generate_episode: max_steps must be >= 1");
  EpisodeRecord ep;
  ep.task = task.id;
  ep.seed = seed;

  WorldState state = init_state(seed, task, cfg);
  ep.frames.push_back(render(state, cfg));
  for (int i = 0; i < max_steps; ++i) {
    Vec2 raw = expert_action(state, task, cfg);
    // Round to f32 so the stored payload replays bit-exactly.
    Vec2 a{f32_round(raw.x), f32_round(raw.y)};
    state = step(state, a, cfg);
    ep.frames.push_back(render(state, cfg));
    ep.actions.push_back({a.x, a.y});
    if (is_success(state, task, cfg)) {
      ep.success = true;
      ep.completion_step = i + 1;
      break;
    }
  }
  return ep;
}

// ---- dataset io -------------------------------------------------------

namespace {

constexpr char kEpMagic[4] = {'F', 'W', 'E', 'P'};
constexpr uint32_t kEpVersion = 1;

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f32(std::string& buf, float v) {
  char b[4];
  std::memcpy(b, &v, 4);
  buf.append(b, 4);
}

struct Reader {
  const char* p;
  const char* end;
  uint32_t u32() {
    require(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    p += 4;
    return v;
  }
  uint64_t u64() {
    require(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    p += 8;
    return v;
  }
  float f32() {
    require(4);
    float v;
    std::memcpy(&v, p, 4);
    p += 4;
    return v;
  }
  uint8_t u8() {
    require(1);
    return static_cast<uint8_t>(*p++);
  }
  void require(std::size_t n) {
    if (static_cast<std::size_t>(end - p) < n) throw IoError("dataset: truncated record");
  }
};

}  // namespace

void save_dataset(const std::string& path, const std::vector<EpisodeRecord>& episodes,
                  const WorldConfig& cfg) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("dataset: cannot open " + path + " for writing");
  std::string header;
  header.append(kEpMagic, 4);
  put_u32(header, kEpVersion);
  put_u32(header, static_cast<uint32_t>(cfg.frame_px));
  put_u32(header, static_cast<uint32_t>(cfg.frame_px));
  put_u32(header, static_cast<uint32_t>(cfg.action_dim));
  put_u32(header, static_cast<uint32_t>(cfg.num_tasks));
  os.write(header.data(), static_cast<std::streamsize>(header.size()));

  for (const auto& ep : episodes) {
    std::string rec;
    put_u32(rec, static_cast<uint32_t>(ep.task));
    put_u64(rec, ep.seed);
    put_u32(rec, static_cast<uint32_t>(ep.frames.size()));
    put_u32(rec, static_cast<uint32_t>(ep.actions.size()));
    rec.push_back(ep.success ? 1 : 0);
    put_u32(rec, static_cast<uint32_t>(ep.completion_step));  // -1 wraps, read back signed
    for (const auto& f : ep.frames) {
      for (double v : f.px) put_f32(rec, static_cast<float>(v));
    }
    for (const auto& a : ep.actions) {
      put_f32(rec, static_cast<float>(a[0]));
      put_f32(rec, static_cast<float>(a[1]));
    }
    std::string lenbuf;
    put_u32(lenbuf, static_cast<uint32_t>(rec.size()));
    os.write(lenbuf.data(), 4);
    os.write(rec.data(), static_cast<std::streamsize>(rec.size()));
  }
  if (!os) throw IoError("dataset: write failure on " + path);
}

std::vector<EpisodeRecord> load_dataset(const std::string& path, WorldConfig* cfg_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("dataset: cannot open " + path);
  std::string blob((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (blob.size() < 24 || std::memcmp(blob.data(), kEpMagic, 4) != 0) {
    throw IoError("dataset: bad magic in " + path);
  }
  Reader r{blob.data() + 4, blob.data() + blob.size()};
  uint32_t version = r.u32();
  if (version != kEpVersion) throw IoError("dataset: unsupported version");
  uint32_t h_px = r.u32();
  uint32_t w_px = r.u32();
  uint32_t a_dim = r.u32();
  uint32_t num_tasks = r.u32();
  if (a_dim != 2) throw IoError("dataset: unsupported action dim " + std::to_string(a_dim));
  if (cfg_out) {
    cfg_out->frame_px = static_cast<int>(h_px);
    cfg_out->num_tasks = static_cast<int>(num_tasks);
  }

  std::vector<EpisodeRecord> eps;
  while (r.p < r.end) {
    uint32_t len = r.u32();
    r.require(len);
    Reader rec{r.p, r.p + len};
    r.p += len;

    EpisodeRecord ep;
    ep.task = static_cast<int>(rec.u32());
    ep.seed = rec.u64();
    uint32_t n_frames = rec.u32();
    uint32_t n_actions = rec.u32();
    ep.success = rec.u8() != 0;
    ep.completion_step = static_cast<int32_t>(rec.u32());
    for (uint32_t i = 0; i < n_frames; ++i) {
      Frame f;
      f.h = static_cast<int>(h_px);
      f.w = static_cast<int>(w_px);
      f.px.resize(static_cast<std::size_t>(h_px) * w_px);
      for (auto& v : f.px) v = static_cast<double>(rec.f32());
      ep.frames.push_back(std::move(f));
    }
    for (uint32_t i = 0; i < n_actions; ++i) {
      double ax = static_cast<double>(rec.f32());
      double ay = static_cast<double>(rec.f32());
      ep.actions.push_back({ax, ay});
    }
    eps.push_back(std::move(ep));
  }
  return eps;
}

}  // namespace fastwam
