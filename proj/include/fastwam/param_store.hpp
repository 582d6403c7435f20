#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fastwam/tensor.hpp"

namespace fastwam {

// Named parameter storage. Iteration is lexicographic by path (std::map).
// Every entry is trainable; gradients are accumulated externally into a
// flat buffer laid out in path order (see offset_of / total_size).
class ParamStore {
 public:
  struct Entry {
    Shape shape;
    std::vector<double> value;
  };

  // Adds a parameter; path must be unique.
  Entry& add(const std::string& path, Shape shape);
  Entry& add(const std::string& path, Shape shape, std::vector<double> value);

  bool contains(const std::string& path) const { return entries_.count(path) != 0; }
  Entry& at(const std::string& path);
  const Entry& at(const std::string& path) const;

  std::size_t count() const { return entries_.size(); }
  std::size_t total_size() const;

  // Flat-buffer offset of a parameter, path order. Computed lazily and
  // invalidated by add().
  std::size_t offset_of(const std::string& path) const;
  int index_of(const std::string& path) const;

  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::map<std::string, Entry>& entries() { return entries_; }

  // Checkpoint file: magic "FWAM", version u32, then per parameter:
  // path length u32, path bytes, rank u32, dims u32 x rank, payload
  // little-endian f64 x count. Round-trip is bit-exact.
  void save(const std::string& path) const;
  static ParamStore load(const std::string& path);

  // Applies flat += update in path order (optimizer hook).
  void for_each(const std::function<void(const std::string&, Entry&)>& fn);

 private:
  void rebuild_offsets() const;

  std::map<std::string, Entry> entries_;
  mutable std::vector<std::pair<std::string, std::size_t>> offsets_;  // path -> flat offset
  mutable bool offsets_valid_ = false;
};

// Per-forward binding of a ParamStore into an autodiff graph. Each
// parameter gets exactly one leaf node per graph so gradients from
// repeated uses accumulate. Graphs are cheap; build one per sample.
class Graph {
 public:
  explicit Graph(const ParamStore& params, bool grad_enabled = true)
      : params_(&params), grad_enabled_(grad_enabled) {}

  Tensor param(const std::string& path);
  bool grad_enabled() const { return grad_enabled_; }

  // After backward() on a loss built from this graph: adds every used
  // leaf's gradient into `flat` (size params.total_size(), path order).
  void accumulate_param_grads(std::vector<double>& flat) const;

 private:
  const ParamStore* params_;
  bool grad_enabled_;
  std::map<std::string, Tensor> leaves_;
};

}  // namespace fastwam
