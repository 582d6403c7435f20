#include "fastwam/tokenize.hpp"

#include <string>

#include "fastwam/errors.hpp"

namespace fastwam {

void ChunkSpec::validate(int h_px, int w_px) const {
  if (action_horizon < 1 || frame_stride < 1 || patch_size < 1) {
    throw ConfigError("ChunkSpec: horizon, stride, patch must be >= 1");
  }
  if (action_horizon % frame_stride != 0) {
    throw ConfigError("ChunkSpec: action_horizon " + std::to_string(action_horizon) +
                      " not divisible by frame_stride " + std::to_string(frame_stride));
  }
  if (h_px % patch_size != 0 || w_px % patch_size != 0) {
    throw ConfigError("ChunkSpec: frame " + std::to_string(h_px) + "x" + std::to_string(w_px) +
                      " not divisible by patch size " + std::to_string(patch_size));
  }
}

std::vector<double> patchify(const Frame& frame, int patch_size) {
  if (patch_size < 1 || frame.h % patch_size != 0 || frame.w % patch_size != 0) {
    throw ConfigError("patchify: frame " + std::to_string(frame.h) + "x" + std::to_string(frame.w) +
                      " not divisible by patch size " + std::to_string(patch_size));
  }
  const int py = frame.h / patch_size;
  const int px = frame.w / patch_size;
  std::vector<double> out(static_cast<std::size_t>(frame.h) * frame.w);
  std::size_t o = 0;
  for (int gy = 0; gy < py; ++gy) {
    for (int gx = 0; gx < px; ++gx) {
      for (int y = 0; y < patch_size; ++y) {
        for (int x = 0; x < patch_size; ++x) {
          out[o++] = frame.at(gy * patch_size + y, gx * patch_size + x);
        }
      }
    }
  }
  return out;
}

Frame unpatchify(const std::vector<double>& tokens, int patch_size, int h_px, int w_px) {
  if (patch_size < 1 || h_px % patch_size != 0 || w_px % patch_size != 0 ||
      tokens.size() != static_cast<std::size_t>(h_px) * w_px) {
    throw ConfigError("unpatchify: token count " + std::to_string(tokens.size()) +
                      " does not match geometry " + std::to_string(h_px) + "x" +
                      std::to_string(w_px) + " / patch " + std::to_string(patch_size));
  }
  Frame f;
  f.h = h_px;
  f.w = w_px;
  f.px.assign(tokens.size(), 0.0);
  const int py = h_px / patch_size;
  const int px = w_px / patch_size;
  std::size_t o = 0;
  for (int gy = 0; gy < py; ++gy) {
    for (int gx = 0; gx < px; ++gx) {
      for (int y = 0; y < patch_size; ++y) {
        for (int x = 0; x < patch_size; ++x) {
          f.px[static_cast<std::size_t>(gy * patch_size + y) * w_px + gx * patch_size + x] =
              tokens[o++];
        }
      }
    }
  }
  return f;
}

Chunk extract_chunk(const EpisodeRecord& ep, int start, const ChunkSpec& spec,
                    const WorldConfig& cfg) {
  spec.validate(cfg.frame_px, cfg.frame_px);
  const int n_actions = static_cast<int>(ep.actions.size());
  if (start < 0 || start >= n_actions) {
    throw DimensionError("extract_chunk: start " + std::to_string(start) +
                         " out of range for episode with " + std::to_string(n_actions) +
                         " actions");
  }
  const int H = spec.action_horizon;
  const int T = spec.future_frames();
  const int last_frame = static_cast<int>(ep.frames.size()) - 1;

  Chunk c;
  c.task = ep.task;
  c.clean = patchify(ep.frames[start], spec.patch_size);
  c.future.reserve(c.clean.size() * T);
  for (int k = 1; k <= T; ++k) {
    int idx = std::min(start + spec.frame_stride * k, last_frame);  // pad by repetition
    auto tok = patchify(ep.frames[idx], spec.patch_size);
    c.future.insert(c.future.end(), tok.begin(), tok.end());
  }
  c.actions.assign(static_cast<std::size_t>(H) * 2, 0.0);
  c.action_valid.assign(H, 0);
  for (int h = 0; h < H; ++h) {
    if (start + h < n_actions) {
      c.actions[static_cast<std::size_t>(h) * 2] = ep.actions[start + h][0];
      c.actions[static_cast<std::size_t>(h) * 2 + 1] = ep.actions[start + h][1];
      c.action_valid[h] = 1;
    }
  }
  return c;
}

TokenLayout build_layout(const ChunkSpec& spec, int h_px, int w_px, int n_instr) {
  spec.validate(h_px, w_px);
  const int n_patch = (h_px / spec.patch_size) * (w_px / spec.patch_size);
  TokenLayout l;
  l.n_clean = n_patch;
  l.n_future = spec.future_frames() * n_patch;
  l.n_action = spec.action_horizon;
  l.n_instr = n_instr;
  return l;
}

}  // namespace fastwam
