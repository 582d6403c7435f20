#include "fastwam/param_store.hpp"

#include <cstring>
#include <fstream>

#include "fastwam/errors.hpp"

namespace fastwam {

namespace {

constexpr char kMagic[4] = {'F', 'W', 'A', 'M'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("checkpoint: truncated u32");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

void write_f64_le(std::ostream& os, const double* data, std::size_t count) {
  // Host is little-endian x86; raw bytes are the wire format.
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
}

void read_f64_le(std::istream& is, double* data, std::size_t count) {
  is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
  if (!is) throw IoError("checkpoint: truncated payload");
}

}  // namespace

ParamStore::Entry& ParamStore::add(const std::string& path, Shape shape) {
  return add(path, std::move(shape), {});
}

ParamStore::Entry& ParamStore::add(const std::string& path, Shape shape, std::vector<double> value) {
  if (entries_.count(path)) throw ConfigError("ParamStore: duplicate path " + path);
  std::size_t n = shape_numel(shape);
  if (value.empty()) value.assign(n, 0.0);
  if (value.size() != n) {
    throw DimensionError("ParamStore: value size " + std::to_string(value.size()) +
                         " does not match shape " + shape_str(shape));
  }
  offsets_valid_ = false;
  auto& e = entries_[path];
  e.shape = std::move(shape);
  e.value = std::move(value);
  return e;
}

ParamStore::Entry& ParamStore::at(const std::string& path) {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw ConfigError("ParamStore: unknown path " + path);
  return it->second;
}

const ParamStore::Entry& ParamStore::at(const std::string& path) const {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw ConfigError("ParamStore: unknown path " + path);
  return it->second;
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& [p, e] : entries_) n += e.value.size();
  return n;
}

void ParamStore::rebuild_offsets() const {
  offsets_.clear();
  std::size_t off = 0;
  for (const auto& [p, e] : entries_) {
    offsets_.emplace_back(p, off);
    off += e.value.size();
  }
  offsets_valid_ = true;
}

std::size_t ParamStore::offset_of(const std::string& path) const {
  if (!offsets_valid_) rebuild_offsets();
  auto it = std::lower_bound(offsets_.begin(), offsets_.end(), path,
                             [](const auto& a, const std::string& b) { return a.first < b; });
  if (it == offsets_.end() || it->first != path) throw ConfigError("ParamStore: unknown path " + path);
  return it->second;
}

int ParamStore::index_of(const std::string& path) const {
  if (!offsets_valid_) rebuild_offsets();
  auto it = std::lower_bound(offsets_.begin(), offsets_.end(), path,
                             [](const auto& a, const std::string& b) { return a.first < b; });
  if (it == offsets_.end() || it->first != path) throw ConfigError("ParamStore: unknown path " + path);
  return static_cast<int>(it - offsets_.begin());
}

void ParamStore::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  for (const auto& [p, e] : entries_) {
    write_u32(os, static_cast<uint32_t>(p.size()));
    os.write(p.data(), static_cast<std::streamsize>(p.size()));
    write_u32(os, static_cast<uint32_t>(e.shape.size()));
    for (int d : e.shape) write_u32(os, static_cast<uint32_t>(d));
    write_f64_le(os, e.value.data(), e.value.size());
  }
  if (!os) throw IoError("checkpoint: write failure on " + path);
}

ParamStore ParamStore::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw IoError("checkpoint: bad magic in " + path);
  uint32_t version = read_u32(is);
  if (version != kVersion) {
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  }
  ParamStore ps;
  while (true) {
    int c = is.peek();
    if (c == std::char_traits<char>::eof()) break;
    uint32_t plen = read_u32(is);
    std::string p(plen, '\0');
    is.read(p.data(), plen);
    if (!is) throw IoError("checkpoint: truncated path");
    uint32_t rank = read_u32(is);
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int>(read_u32(is));
    std::vector<double> value(shape_numel(shape));
    read_f64_le(is, value.data(), value.size());
    ps.add(p, std::move(shape), std::move(value));
  }
  return ps;
}

void ParamStore::for_each(const std::function<void(const std::string&, Entry&)>& fn) {
  for (auto& [p, e] : entries_) fn(p, e);
}

Tensor Graph::param(const std::string& path) {
  auto it = leaves_.find(path);
  if (it != leaves_.end()) return it->second;
  const auto& e = params_->at(path);
  Tensor leaf = grad_enabled_
                    ? Tensor::param_view(e.shape, e.value.data(), params_->index_of(path))
                    : Tensor::const_view(e.shape, e.value.data());
  leaves_.emplace(path, leaf);
  return leaf;
}

void Graph::accumulate_param_grads(std::vector<double>& flat) const {
  if (flat.size() != params_->total_size()) {
    throw DimensionError("accumulate_param_grads: flat buffer has wrong size");
  }
  for (const auto& [path, leaf] : leaves_) {
    const auto& g = leaf.grad();
    if (g.empty()) continue;
    std::size_t off = params_->offset_of(path);
    for (std::size_t i = 0; i < g.size(); ++i) flat[off + i] += g[i];
  }
}

}  // namespace fastwam
