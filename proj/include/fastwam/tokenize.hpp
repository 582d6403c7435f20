#pragma once

#include <cstdint>
#include <vector>

#include "fastwam/toyworld.hpp"

namespace fastwam {

struct ChunkSpec {
  int action_horizon = 8;  // H
  int frame_stride = 2;    // temporal downsampling
  int patch_size = 4;

  int future_frames() const { return action_horizon / frame_stride; }  // T
  void validate(int h_px, int w_px) const;
};

// Contiguous arrangement of the token groups, canonical order
// [clean | future | action]; instruction tokens live in a separate
// cross-attention sequence.
struct TokenLayout {
  int n_clean = 0;
  int n_future = 0;
  int n_action = 0;
  int n_instr = 2;

  int total() const { return n_clean + n_future + n_action; }
  int clean_offset() const { return 0; }
  int future_offset() const { return n_clean; }
  int action_offset() const { return n_clean + n_future; }
};

// Lossless non-overlapping patches, row-major patch order, each patch
// flattened row-major: [N_patch, patch*patch].
std::vector<double> patchify(const Frame& frame, int patch_size);
Frame unpatchify(const std::vector<double>& tokens, int patch_size, int h_px, int w_px);

// One training sample extracted from an episode.
struct Chunk {
  std::vector<double> clean;           // [n_patch, d_patch] of frames[start]
  std::vector<double> future;          // [T, n_patch, d_patch] flattened
  std::vector<double> actions;         // [H, A]
  std::vector<uint8_t> action_valid;   // [H], 0 marks padded steps
  int task = 0;
};

// clean = patchify(frames[start]); future frames at start + stride*k,
// k=1..T; actions[start..start+H). Tails past the episode end pad by
// repeating the final frame and zero actions flagged invalid.
Chunk extract_chunk(const EpisodeRecord& ep, int start, const ChunkSpec& spec,
                    const WorldConfig& cfg);

TokenLayout build_layout(const ChunkSpec& spec, int h_px, int w_px, int n_instr = 2);

}  // namespace fastwam
