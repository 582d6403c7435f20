#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace fastwam {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Dense boolean matrix, rows = queries, cols = keys.
struct BoolMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<uint8_t> allow;

  BoolMatrix() = default;
  BoolMatrix(int r, int c, bool value = false)
      : rows(r), cols(c), allow(static_cast<std::size_t>(r) * c, value ? 1 : 0) {}

  bool at(int r, int c) const { return allow[static_cast<std::size_t>(r) * cols + c] != 0; }
  void set(int r, int c, bool v) { allow[static_cast<std::size_t>(r) * cols + c] = v ? 1 : 0; }

  // Throws InvalidMaskError if some query row allows no key.
  void validate_no_empty_rows(const std::string& context) const;
};

namespace detail {

struct Node {
  Shape shape;
  std::size_t size = 0;
  std::vector<double> owned;   // storage for op outputs and data leaves
  const double* view = nullptr;  // external storage (parameter leaves)
  bool requires_grad = false;
  int param_id = -1;  // >= 0 marks a parameter leaf
  std::vector<double> grad;  // allocated lazily during backward
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents

  const double* data() const { return view != nullptr ? view : owned.data(); }
  double* grad_accum();  // allocates zeroed grad on first use
};

}  // namespace detail

using NodePtr = std::shared_ptr<detail::Node>;

// Reverse-mode autodiff tensor handle. Values are immutable after
// construction; gradients accumulate during a single-threaded backward().
class Tensor {
 public:
  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double v);
  // Leaf viewing external storage (parameters). Caller keeps storage alive.
  static Tensor param_view(Shape shape, const double* storage, int param_id);
  // Read-only leaf view, never tracked by autodiff.
  static Tensor const_view(Shape shape, const double* storage);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  std::size_t size() const { return n_->size; }
  const double* data() const { return n_->data(); }
  std::vector<double> to_vector() const;
  double scalar_value() const;
  bool requires_grad() const { return n_->requires_grad; }

  // Populated for leaves after backward(); empty when untouched.
  const std::vector<double>& grad() const { return n_->grad; }

  // Runs reverse-mode accumulation from this scalar. Deterministic
  // topological order; every reachable requires_grad leaf ends with a
  // populated grad.
  void backward() const;

  NodePtr node() const { return n_; }
  explicit Tensor(NodePtr n) : n_(std::move(n)) {}

 private:
  NodePtr n_;
};

// ---- differentiable ops -------------------------------------------------

// out[...,j] = sum_i x[...,i] * w[i,j] + b[j]; leading axes of x flattened.
// Accumulation starts at b[j] and proceeds in ascending i.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

// Normalizes the last axis to mean 0 / variance 1 (biased), then scales
// and shifts: out = gamma * xhat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Row-stochastic softmax over allowed keys only; masked entries are
// exactly 0.0 and excluded from the denominator. scores: [B,H,Nq,Nk].
Tensor masked_softmax(const Tensor& scores, const BoolMatrix& mask);

// Scaled dot-product attention, scale 1/sqrt(Dh), q/k/v: [B,H,N,Dh].
// Masked keys are never read; reductions run in ascending key index, so
// the output is bit-exactly invariant to values at masked positions.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const BoolMatrix& mask);

// Same attention kernel with an out-of-graph key/value prefix prepended
// (context cache path). Forward-only: q/k/v must not require grad.
Tensor attention_with_prefix(const Tensor& q, const Tensor& k_new, const Tensor& v_new,
                             const std::vector<double>& k_prefix,
                             const std::vector<double>& v_prefix, int n_prefix,
                             const BoolMatrix& mask);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

// out[n,d] = x[n,d] * (1 + s[d]) + t[d]  (adaptive modulation)
Tensor row_affine(const Tensor& x, const Tensor& s, const Tensor& t);

Tensor gelu(const Tensor& x);  // tanh approximation
Tensor silu(const Tensor& x);

// Concatenate 2-D tensors along axis 0.
Tensor concat_rows(const std::vector<Tensor>& parts);
// Rows [r0, r1) of a 2-D tensor.
Tensor slice_rows(const Tensor& x, int r0, int r1);

// [N, H*dh] -> [1, H, N, dh] and back.
Tensor split_heads(const Tensor& x, int n_heads);
Tensor merge_heads(const Tensor& x);

// Row `row` of a 2-D table, result [1, C].
Tensor select_row(const Tensor& table, int row);

Tensor reshape(const Tensor& x, Shape shape);

// Mean squared error over valid elements; valid==nullptr means all.
// Throws ConfigError when the valid set is empty.
Tensor mse_masked(const Tensor& pred, const std::vector<double>& target,
                  const std::vector<uint8_t>* valid = nullptr);

Tensor sum(const Tensor& x);

}  // namespace fastwam
