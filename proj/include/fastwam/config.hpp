#pragma once

#include <map>
#include <string>

#include "fastwam/model.hpp"
#include "fastwam/optimizer.hpp"
#include "fastwam/tokenize.hpp"
#include "fastwam/variants.hpp"

namespace fastwam {

// Full training-run configuration. Serializes to a flat key=value file
// (one pair per line, '#' comments); unknown keys are errors.
struct TrainConfig {
  // variant
  VariantConfig variant;
  // model dims (layout derived from chunk + world below)
  int d_video = 128;
  int d_action = 64;
  int d_attn = 64;
  int n_heads = 4;
  int n_blocks = 4;
  int d_instr = 32;
  int n_instr = 2;
  int d_time_sin = 32;
  double dropout = 0.0;
  // chunking
  ChunkSpec chunk;
  // world
  WorldConfig world;
  // optimization
  double lr = 1e-4;
  double weight_decay = 0.01;
  double grad_clip_norm = 1.0;
  int total_steps = 5000;
  int batch_size = 32;
  uint64_t seed = 0;
  int threads = 1;
  int checkpoint_every = 1000;
  std::string data_path = "data/train.fwep";
  std::string out_dir = "runs/default";

  ModelConfig model_config() const;
  AdamWConfig adamw_config() const;
  void validate() const;

  std::map<std::string, std::string> to_kv() const;
  static TrainConfig from_kv(const std::map<std::string, std::string>& kv);
  static TrainConfig load(const std::string& path);
  void save(const std::string& path) const;
};

// Parses "key=value" lines; '#' starts a comment; blank lines skipped.
std::map<std::string, std::string> parse_kv_file(const std::string& path);
std::map<std::string, std::string> parse_kv_text(const std::string& text);

// FNV-1a over a file's bytes, hex string; used in results provenance.
std::string file_hash_hex(const std::string& path);
std::string text_hash_hex(const std::string& text);

}  // namespace fastwam
