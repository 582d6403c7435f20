#include "fastwam/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "fastwam/errors.hpp"

namespace fastwam {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  std::size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: bad numeric value for " + key + ": '" + v + "'");
  }
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    long n = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<int>(n);
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer value for " + key + ": '" + v + "'");
  }
}

uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    unsigned long long n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<uint64_t>(n);
  } catch (const std::exception&) {
    throw ConfigError("config: bad unsigned value for " + key + ": '" + v + "'");
  }
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

ModelConfig TrainConfig::model_config() const {
  ModelConfig mc;
  mc.d_video = d_video;
  mc.d_action = d_action;
  mc.d_attn = d_attn;
  mc.n_heads = n_heads;
  mc.n_blocks = n_blocks;
  mc.d_patch = chunk.patch_size * chunk.patch_size;
  mc.action_dim = world.action_dim;
  mc.d_instr = d_instr;
  mc.n_instr = n_instr;
  mc.num_tasks = world.num_tasks;
  mc.d_time_sin = d_time_sin;
  mc.dropout = dropout;
  mc.layout = build_layout(chunk, world.frame_px, world.frame_px, n_instr);
  return mc;
}

AdamWConfig TrainConfig::adamw_config() const {
  AdamWConfig ac;
  ac.lr = lr;
  ac.weight_decay = weight_decay;
  ac.grad_clip_norm = grad_clip_norm;
  ac.total_steps = static_cast<uint64_t>(total_steps);
  return ac;
}

void TrainConfig::validate() const {
  variant.validate();
  model_config().validate();
  if (lr <= 0.0 || weight_decay < 0.0 || grad_clip_norm <= 0.0) {
    throw ConfigError("TrainConfig: lr/weight_decay/grad_clip_norm out of range");
  }
  if (total_steps < 1 || batch_size < 1 || threads < 1 || checkpoint_every < 1) {
    throw ConfigError("TrainConfig: steps/batch/threads/checkpoint_every must be >= 1");
  }
}

std::map<std::string, std::string> TrainConfig::to_kv() const {
  std::map<std::string, std::string> kv;
  kv["variant"] = to_string(variant.kind);
  kv["lambda"] = fmt(variant.lambda);
  kv["idm_noise_aug_prob"] = fmt(variant.idm_noise_aug_prob);
  kv["idm_aug_t_max"] = fmt(variant.idm_aug_t_max);
  kv["n_steps_action"] = std::to_string(variant.n_steps_action);
  kv["n_steps_video"] = std::to_string(variant.n_steps_video);
  kv["cfg_scale"] = fmt(variant.cfg_scale);
  kv["cfg_dropout_prob"] = fmt(variant.cfg_dropout_prob);
  kv["t_mean"] = fmt(variant.t_mean);
  kv["t_std"] = fmt(variant.t_std);
  kv["d_video"] = std::to_string(d_video);
  kv["d_action"] = std::to_string(d_action);
  kv["d_attn"] = std::to_string(d_attn);
  kv["n_heads"] = std::to_string(n_heads);
  kv["n_blocks"] = std::to_string(n_blocks);
  kv["d_instr"] = std::to_string(d_instr);
  kv["n_instr"] = std::to_string(n_instr);
  kv["d_time_sin"] = std::to_string(d_time_sin);
  kv["dropout"] = fmt(dropout);
  kv["action_horizon"] = std::to_string(chunk.action_horizon);
  kv["frame_stride"] = std::to_string(chunk.frame_stride);
  kv["patch_size"] = std::to_string(chunk.patch_size);
  kv["frame_px"] = std::to_string(world.frame_px);
  kv["num_tasks"] = std::to_string(world.num_tasks);
  kv["lr"] = fmt(lr);
  kv["weight_decay"] = fmt(weight_decay);
  kv["grad_clip_norm"] = fmt(grad_clip_norm);
  kv["total_steps"] = std::to_string(total_steps);
  kv["batch_size"] = std::to_string(batch_size);
  kv["seed"] = std::to_string(seed);
  kv["threads"] = std::to_string(threads);
  kv["checkpoint_every"] = std::to_string(checkpoint_every);
  kv["data_path"] = data_path;
  kv["out_dir"] = out_dir;
  return kv;
}

TrainConfig TrainConfig::from_kv(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  for (const auto& [key, v] : kv) {
    if (key == "variant") c.variant.kind = variant_from_string(v);
    else if (key == "lambda") c.variant.lambda = to_double(key, v);
    else if (key == "idm_noise_aug_prob") c.variant.idm_noise_aug_prob = to_double(key, v);
    else if (key == "idm_aug_t_max") c.variant.idm_aug_t_max = to_double(key, v);
    else if (key == "n_steps_action") c.variant.n_steps_action = to_int(key, v);
    else if (key == "n_steps_video") c.variant.n_steps_video = to_int(key, v);
    else if (key == "cfg_scale") c.variant.cfg_scale = to_double(key, v);
    else if (key == "cfg_dropout_prob") c.variant.cfg_dropout_prob = to_double(key, v);
    else if (key == "t_mean") c.variant.t_mean = to_double(key, v);
    else if (key == "t_std") c.variant.t_std = to_double(key, v);
    else if (key == "d_video") c.d_video = to_int(key, v);
    else if (key == "d_action") c.d_action = to_int(key, v);
    else if (key == "d_attn") c.d_attn = to_int(key, v);
    else if (key == "n_heads") c.n_heads = to_int(key, v);
    else if (key == "n_blocks") c.n_blocks = to_int(key, v);
    else if (key == "d_instr") c.d_instr = to_int(key, v);
    else if (key == "n_instr") c.n_instr = to_int(key, v);
    else if (key == "d_time_sin") c.d_time_sin = to_int(key, v);
    else if (key == "dropout") c.dropout = to_double(key, v);
    else if (key == "action_horizon") c.chunk.action_horizon = to_int(key, v);
    else if (key == "frame_stride") c.chunk.frame_stride = to_int(key, v);
    else if (key == "patch_size") c.chunk.patch_size = to_int(key, v);
    else if (key == "frame_px") c.world.frame_px = to_int(key, v);
    else if (key == "num_tasks") c.world.num_tasks = to_int(key, v);
    else if (key == "lr") c.lr = to_double(key, v);
    else if (key == "weight_decay") c.weight_decay = to_double(key, v);
    else if (key == "grad_clip_norm") c.grad_clip_norm = to_double(key, v);
    else if (key == "total_steps") c.total_steps = to_int(key, v);
    else if (key == "batch_size") c.batch_size = to_int(key, v);
    else if (key == "seed") c.seed = to_u64(key, v);
    else if (key == "threads") c.threads = to_int(key, v);
    else if (key == "checkpoint_every") c.checkpoint_every = to_int(key, v);
    else if (key == "data_path") c.data_path = v;
    else if (key == "out_dir") c.out_dir = v;
    else throw ConfigError("config: unknown key '" + key + "'");
  }
  if (c.variant.kind == VariantKind::NoCoTrain && !kv.count("lambda")) c.variant.lambda = 0.0;
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) { return from_kv(parse_kv_file(path)); }

void TrainConfig::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("config: cannot open " + path + " for writing");
  for (const auto& [k, v] : to_kv()) os << k << "=" << v << "\n";
  if (!os) throw IoError("config: write failure on " + path);
}

std::map<std::string, std::string> parse_kv_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(line_no) + " is not key=value: '" + line +
                        "'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config: empty key at line " + std::to_string(line_no));
    if (kv.count(key)) throw ConfigError("config: duplicate key '" + key + "'");
    kv[key] = value;
  }
  return kv;
}

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_kv_text(text);
}

std::string text_hash_hex(const std::string& text) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash_hex(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("hash: cannot open " + path);
  std::string blob((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return text_hash_hex(blob);
}

}  // namespace fastwam
