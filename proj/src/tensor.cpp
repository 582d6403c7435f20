#include "fastwam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "fastwam/errors.hpp"

namespace fastwam {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

void BoolMatrix::validate_no_empty_rows(const std::string& context) const {
  for (int r = 0; r < rows; ++r) {
    bool any = false;
    for (int c = 0; c < cols; ++c) {
      if (at(r, c)) {
        any = true;
        break;
      }
    }
    if (!any) {
      throw InvalidMaskError(context + ": query row " + std::to_string(r) +
                             " of mask has no allowed key");
    }
  }
}

namespace detail {

double* Node::grad_accum() {
  if (grad.empty()) grad.assign(size, 0.0);
  return grad.data();
}

}  // namespace detail

using detail::Node;

namespace {

NodePtr make_node(Shape shape) {
  auto n = std::make_shared<Node>();
  n->size = shape_numel(shape);
  n->shape = std::move(shape);
  n->owned.assign(n->size, 0.0);
  return n;
}

void require_shape_eq(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void check_positive_dims(const Shape& s, const char* op) {
  for (int d : s) {
    if (d <= 0) throw DimensionError(std::string(op) + ": non-positive dimension in " + shape_str(s));
  }
}

}  // namespace

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  check_positive_dims(shape, "from_data");
  std::size_t n = shape_numel(shape);
  if (n != data.size()) {
    throw DimensionError("from_data: shape " + shape_str(shape) + " wants " + std::to_string(n) +
                         " elements, got " + std::to_string(data.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->size = n;
  node->owned = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(node);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  check_positive_dims(shape, "zeros");
  auto node = make_node(std::move(shape));
  node->requires_grad = requires_grad;
  return Tensor(node);
}

Tensor Tensor::scalar(double v) { return from_data({1}, {v}, false); }

Tensor Tensor::param_view(Shape shape, const double* storage, int param_id) {
  check_positive_dims(shape, "param_view");
  auto node = std::make_shared<Node>();
  node->size = shape_numel(shape);
  node->shape = std::move(shape);
  node->view = storage;
  node->requires_grad = true;
  node->param_id = param_id;
  return Tensor(node);
}

Tensor Tensor::const_view(Shape shape, const double* storage) {
  check_positive_dims(shape, "const_view");
  auto node = std::make_shared<Node>();
  node->size = shape_numel(shape);
  node->shape = std::move(shape);
  node->view = storage;
  node->requires_grad = false;
  return Tensor(node);
}

std::vector<double> Tensor::to_vector() const {
  return std::vector<double>(data(), data() + size());
}

double Tensor::scalar_value() const {
  if (size() != 1) throw DimensionError("scalar_value: tensor has " + std::to_string(size()) + " elements");
  return data()[0];
}

void Tensor::backward() const {
  if (!defined()) throw ConfigError("backward: undefined tensor");
  if (size() != 1) throw DimensionError("backward: root must be scalar, got " + shape_str(shape()));
  if (!n_->requires_grad) return;

  // Iterative post-order DFS; parents visited in stored order, so the
  // topological order is deterministic.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({n_.get(), 0});
  visited.insert(n_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && visited.insert(p).second) {
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  n_->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backprop && !node->grad.empty()) {
      node->backprop(*node);
    }
  }
}

// ---- elementwise ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_shape_eq(a, b, "add");
  auto out = make_node(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < out->size; ++i) out->owned[i] = pa[i] + pb[i];
  out->requires_grad = a.requires_grad() || b.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node(), b.node()};
    out->backprop = [](Node& self) {
      const double* g = self.grad.data();
      for (int s = 0; s < 2; ++s) {
        Node* p = self.parents[s].get();
        if (!p->requires_grad) continue;
        double* pg = p->grad_accum();
        for (std::size_t i = 0; i < self.size; ++i) pg[i] += g[i];
      }
    };
  }
  return Tensor(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_shape_eq(a, b, "mul");
  auto out = make_node(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < out->size; ++i) out->owned[i] = pa[i] * pb[i];
  out->requires_grad = a.requires_grad() || b.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node(), b.node()};
    out->backprop = [](Node& self) {
      const double* g = self.grad.data();
      Node* pa = self.parents[0].get();
      Node* pb = self.parents[1].get();
      if (pa->requires_grad) {
        double* ga = pa->grad_accum();
        const double* vb = pb->data();
        for (std::size_t i = 0; i < self.size; ++i) ga[i] += g[i] * vb[i];
      }
      if (pb->requires_grad) {
        double* gb = pb->grad_accum();
        const double* va = pa->data();
        for (std::size_t i = 0; i < self.size; ++i) gb[i] += g[i] * va[i];
      }
    };
  }
  return Tensor(out);
}

Tensor scale(const Tensor& a, double c) {
  auto out = make_node(a.shape());
  const double* pa = a.data();
  for (std::size_t i = 0; i < out->size; ++i) out->owned[i] = pa[i] * c;
  out->requires_grad = a.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node()};
    out->backprop = [c](Node& self) {
      const double* g = self.grad.data();
      double* pg = self.parents[0]->grad_accum();
      for (std::size_t i = 0; i < self.size; ++i) pg[i] += g[i] * c;
    };
  }
  return Tensor(out);
}

// ---- affine ---------------------------------------------------------------

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.shape().size() != 2) throw DimensionError("affine: w must be 2-D, got " + shape_str(w.shape()));
  if (b.shape().size() != 1) throw DimensionError("affine: b must be 1-D, got " + shape_str(b.shape()));
  const int din = w.shape()[0];
  const int dout = w.shape()[1];
  if (b.shape()[0] != dout) {
    throw DimensionError("affine: bias shape " + shape_str(b.shape()) + " does not match w " +
                         shape_str(w.shape()));
  }
  const Shape& xs = x.shape();
  if (xs.empty() || xs.back() != din) {
    throw DimensionError("affine: x " + shape_str(xs) + " inner dim does not match w " +
                         shape_str(w.shape()));
  }
  const std::size_t rows = x.size() / static_cast<std::size_t>(din);

  Shape out_shape(xs);
  out_shape.back() = dout;
  auto out = make_node(out_shape);

  const double* px = x.data();
  const double* pw = w.data();
  const double* pb = b.data();
  double* po = out->owned.data();
  for (std::size_t m = 0; m < rows; ++m) {
    const double* xr = px + m * din;
    double* orow = po + m * dout;
    for (int j = 0; j < dout; ++j) orow[j] = pb[j];
    for (int i = 0; i < din; ++i) {
      const double xi = xr[i];
      const double* wr = pw + static_cast<std::size_t>(i) * dout;
      for (int j = 0; j < dout; ++j) orow[j] += xi * wr[j];
    }
  }

  out->requires_grad = x.requires_grad() || w.requires_grad() || b.requires_grad();
  if (out->requires_grad) {
    out->parents = {x.node(), w.node(), b.node()};
    out->backprop = [rows, din, dout](Node& self) {
      const double* g = self.grad.data();
      Node* nx = self.parents[0].get();
      Node* nw = self.parents[1].get();
      Node* nb = self.parents[2].get();
      if (nx->requires_grad) {
        double* gx = nx->grad_accum();
        const double* pw = nw->data();
        for (std::size_t m = 0; m < rows; ++m) {
          const double* gr = g + m * dout;
          double* gxr = gx + m * din;
          for (int i = 0; i < din; ++i) {
            const double* wr = pw + static_cast<std::size_t>(i) * dout;
            double acc = 0.0;
            for (int j = 0; j < dout; ++j) acc += gr[j] * wr[j];
            gxr[i] += acc;
          }
        }
      }
      if (nw->requires_grad) {
        double* gw = nw->grad_accum();
        const double* px = nx->data();
        for (std::size_t m = 0; m < rows; ++m) {
          const double* xr = px + m * din;
          const double* gr = g + m * dout;
          for (int i = 0; i < din; ++i) {
            const double xi = xr[i];
            double* gwr = gw + static_cast<std::size_t>(i) * dout;
            for (int j = 0; j < dout; ++j) gwr[j] += xi * gr[j];
          }
        }
      }
      if (nb->requires_grad) {
        double* gb = nb->grad_accum();
        for (std::size_t m = 0; m < rows; ++m) {
          const double* gr = g + m * dout;
          for (int j = 0; j < dout; ++j) gb[j] += gr[j];
        }
      }
    };
  }
  return Tensor(out);
}

// ---- layer norm -----------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const Shape& xs = x.shape();
  if (xs.empty()) throw DimensionError("layer_norm: x must have at least one axis");
  const int d = xs.back();
  if (d < 1) throw DimensionError("layer_norm: last axes dimension must be >= 1");
  if (eps <= 0.0) throw ConfigError("layer_norm: eps must be positive");
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gamma/beta must be [" + std::to_string(d) + "], got " +
                         shape_str(gamma.shape()) + " / " + shape_str(beta.shape()));
  }
  const std::size_t rows = x.size() / static_cast<std::size_t>(d);

  auto out = make_node(xs);
  // Cache xhat and inv_std per row for backward.
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);

  const double* px = x.data();
  const double* pg = gamma.data();
  const double* pbeta = beta.data();
  double* po = out->owned.data();
  for (std::size_t m = 0; m < rows; ++m) {
    const double* xr = px + m * d;
    double mean = 0.0;
    for (int i = 0; i < d; ++i) mean += xr[i];
    mean /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) {
      const double c = xr[i] - mean;
      var += c * c;
    }
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[m] = is;
    double* hr = xhat->data() + m * d;
    double* orow = po + m * d;
    for (int i = 0; i < d; ++i) {
      hr[i] = (xr[i] - mean) * is;
      orow[i] = pg[i] * hr[i] + pbeta[i];
    }
  }

  out->requires_grad = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  if (out->requires_grad) {
    out->parents = {x.node(), gamma.node(), beta.node()};
    out->backprop = [rows, d, xhat, inv_std](Node& self) {
      const double* g = self.grad.data();
      Node* nx = self.parents[0].get();
      Node* ng = self.parents[1].get();
      Node* nb = self.parents[2].get();
      const double* pgam = ng->data();
      if (nx->requires_grad) {
        double* gx = nx->grad_accum();
        for (std::size_t m = 0; m < rows; ++m) {
          const double* gr = g + m * d;
          const double* hr = xhat->data() + m * d;
          const double is = (*inv_std)[m];
          // dL/dxhat = g * gamma; standard layernorm backward over the row
          double sum_dh = 0.0, sum_dh_h = 0.0;
          for (int i = 0; i < d; ++i) {
            const double dh = gr[i] * pgam[i];
            sum_dh += dh;
            sum_dh_h += dh * hr[i];
          }
          double* gxr = gx + m * d;
          for (int i = 0; i < d; ++i) {
            const double dh = gr[i] * pgam[i];
            gxr[i] += is * (dh - sum_dh / d - hr[i] * sum_dh_h / d);
          }
        }
      }
      if (ng->requires_grad) {
        double* gg = ng->grad_accum();
        for (std::size_t m = 0; m < rows; ++m) {
          const double* gr = g + m * d;
          const double* hr = xhat->data() + m * d;
          for (int i = 0; i < d; ++i) gg[i] += gr[i] * hr[i];
        }
      }
      if (nb->requires_grad) {
        double* gb = nb->grad_accum();
        for (std::size_t m = 0; m < rows; ++m) {
          const double* gr = g + m * d;
          for (int i = 0; i < d; ++i) gb[i] += gr[i];
        }
      }
    };
  }
  return Tensor(out);
}

// ---- masked softmax ---------------------------------------------------

Tensor masked_softmax(const Tensor& scores, const BoolMatrix& mask) {
  const Shape& ss = scores.shape();
  if (ss.size() != 4) throw DimensionError("masked_softmax: scores must be [B,H,Nq,Nk], got " + shape_str(ss));
  const int B = ss[0], H = ss[1], nq = ss[2], nk = ss[3];
  if (mask.rows != nq || mask.cols != nk) {
    throw DimensionError("masked_softmax: mask " + std::to_string(mask.rows) + "x" +
                         std::to_string(mask.cols) + " does not match scores " + shape_str(ss));
  }
  mask.validate_no_empty_rows("masked_softmax");

  auto out = make_node(ss);
  const double* ps = scores.data();
  double* po = out->owned.data();
  const std::size_t row_sz = static_cast<std::size_t>(nk);
  for (std::size_t bh = 0; bh < static_cast<std::size_t>(B) * H; ++bh) {
    for (int i = 0; i < nq; ++i) {
      const double* sr = ps + (bh * nq + i) * row_sz;
      double* orow = po + (bh * nq + i) * row_sz;
      const uint8_t* mr = mask.allow.data() + static_cast<std::size_t>(i) * nk;
      double mx = -HUGE_VAL;
      for (int j = 0; j < nk; ++j) {
        if (mr[j] && sr[j] > mx) mx = sr[j];
      }
      double z = 0.0;
      for (int j = 0; j < nk; ++j) {
        if (mr[j]) {
          const double e = std::exp(sr[j] - mx);
          orow[j] = e;
          z += e;
        } else {
          orow[j] = 0.0;
        }
      }
      const double inv_z = 1.0 / z;
      for (int j = 0; j < nk; ++j) {
        if (mr[j]) orow[j] *= inv_z;
      }
    }
  }

  out->requires_grad = scores.requires_grad();
  if (out->requires_grad) {
    BoolMatrix m = mask;
    out->parents = {scores.node()};
    out->backprop = [B, H, nq, nk, m](Node& self) {
      const double* g = self.grad.data();
      const double* p = self.owned.data();
      double* gs = self.parents[0]->grad_accum();
      for (std::size_t bh = 0; bh < static_cast<std::size_t>(B) * H; ++bh) {
        for (int i = 0; i < nq; ++i) {
          const std::size_t off = (bh * nq + i) * nk;
          const uint8_t* mr = m.allow.data() + static_cast<std::size_t>(i) * nk;
          double dot = 0.0;
          for (int j = 0; j < nk; ++j) {
            if (mr[j]) dot += g[off + j] * p[off + j];
          }
          for (int j = 0; j < nk; ++j) {
            if (mr[j]) gs[off + j] += p[off + j] * (g[off + j] - dot);
          }
        }
      }
    };
  }
  return Tensor(out);
}

// ---- attention ------------------------------------------------------------

namespace {

// Key/value storage split into an optional prefix segment and a new
// segment; combined index runs prefix first, then new, ascending.
struct KvSegments {
  const double* prefix = nullptr;  // [H, n_prefix, dh]
  int n_prefix = 0;
  const double* fresh = nullptr;  // [H, n_fresh, dh]
  int n_fresh = 0;

  const double* row(int h, int j, int dh, int /*unused*/) const {
    if (j < n_prefix) return prefix + (static_cast<std::size_t>(h) * n_prefix + j) * dh;
    return fresh + (static_cast<std::size_t>(h) * n_fresh + (j - n_prefix)) * dh;
  }
};

// Shared attention kernel: one implementation serves the in-graph op and
// the cached-prefix op, which keeps the two code paths bit-identical.
// q: [H, Nq, dh] for one batch item; probs (optional) [H, Nq, Nk].
void attention_forward_kernel(int H, int nq, int nk, int dh, const double* q,
                              const KvSegments& keys, const KvSegments& vals,
                              const BoolMatrix& mask, double* out, double* probs) {
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> srow(nk);
  for (int h = 0; h < H; ++h) {
    for (int i = 0; i < nq; ++i) {
      const double* qr = q + (static_cast<std::size_t>(h) * nq + i) * dh;
      const uint8_t* mr = mask.allow.data() + static_cast<std::size_t>(i) * nk;
      double mx = -HUGE_VAL;
      for (int j = 0; j < nk; ++j) {
        if (!mr[j]) continue;
        const double* kr = keys.row(h, j, dh, nk);
        double s = 0.0;
        for (int d = 0; d < dh; ++d) s += qr[d] * kr[d];
        s *= scl;
        srow[j] = s;
        if (s > mx) mx = s;
      }
      double z = 0.0;
      for (int j = 0; j < nk; ++j) {
        if (!mr[j]) continue;
        srow[j] = std::exp(srow[j] - mx);
        z += srow[j];
      }
      const double inv_z = 1.0 / z;
      double* orow = out + (static_cast<std::size_t>(h) * nq + i) * dh;
      for (int d = 0; d < dh; ++d) orow[d] = 0.0;
      for (int j = 0; j < nk; ++j) {
        if (!mr[j]) {
          if (probs) probs[(static_cast<std::size_t>(h) * nq + i) * nk + j] = 0.0;
          continue;
        }
        const double p = srow[j] * inv_z;
        if (probs) probs[(static_cast<std::size_t>(h) * nq + i) * nk + j] = p;
        const double* vr = vals.row(h, j, dh, nk);
        for (int d = 0; d < dh; ++d) orow[d] += p * vr[d];
      }
    }
  }
}

void check_attention_shapes(const Tensor& q, const Tensor& k, const Tensor& v,
                            const BoolMatrix& mask, int n_prefix) {
  const Shape& qs = q.shape();
  const Shape& ks = k.shape();
  const Shape& vs = v.shape();
  if (qs.size() != 4 || ks.size() != 4 || vs.size() != 4) {
    throw DimensionError("attention: q/k/v must be [B,H,N,Dh], got " + shape_str(qs) + " " +
                         shape_str(ks) + " " + shape_str(vs));
  }
  if (qs[0] != ks[0] || qs[0] != vs[0] || qs[1] != ks[1] || qs[1] != vs[1] || qs[3] != ks[3] ||
      qs[3] != vs[3] || ks[2] != vs[2]) {
    throw DimensionError("attention: incompatible shapes " + shape_str(qs) + " " + shape_str(ks) +
                         " " + shape_str(vs));
  }
  const int nk_total = ks[2] + n_prefix;
  if (mask.rows != qs[2] || mask.cols != nk_total) {
    throw DimensionError("attention: mask " + std::to_string(mask.rows) + "x" +
                         std::to_string(mask.cols) + " does not match Nq=" + std::to_string(qs[2]) +
                         " Nk=" + std::to_string(nk_total));
  }
}

}  // namespace

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const BoolMatrix& mask) {
  check_attention_shapes(q, k, v, mask, 0);
  mask.validate_no_empty_rows("attention");
  const int B = q.shape()[0], H = q.shape()[1], nq = q.shape()[2], dh = q.shape()[3];
  const int nk = k.shape()[2];

  auto out = make_node(q.shape());
  const bool needs_grad = q.requires_grad() || k.requires_grad() || v.requires_grad();
  auto probs = needs_grad
                   ? std::make_shared<std::vector<double>>(static_cast<std::size_t>(B) * H * nq * nk)
                   : nullptr;

  const std::size_t q_batch = static_cast<std::size_t>(H) * nq * dh;
  const std::size_t k_batch = static_cast<std::size_t>(H) * nk * dh;
  for (int b = 0; b < B; ++b) {
    KvSegments keys{nullptr, 0, k.data() + b * k_batch, nk};
    KvSegments vals{nullptr, 0, v.data() + b * k_batch, nk};
    attention_forward_kernel(H, nq, nk, dh, q.data() + b * q_batch, keys, vals, mask,
                             out->owned.data() + b * q_batch,
                             probs ? probs->data() + static_cast<std::size_t>(b) * H * nq * nk : nullptr);
  }

  out->requires_grad = needs_grad;
  if (needs_grad) {
    BoolMatrix m = mask;
    out->parents = {q.node(), k.node(), v.node()};
    out->backprop = [B, H, nq, nk, dh, m, probs](Node& self) {
      const double* g = self.grad.data();
      Node* nq_node = self.parents[0].get();
      Node* nk_node = self.parents[1].get();
      Node* nv_node = self.parents[2].get();
      const double* pq = nq_node->data();
      const double* pk = nk_node->data();
      const double* pv = nv_node->data();
      double* gq = nq_node->requires_grad ? nq_node->grad_accum() : nullptr;
      double* gk = nk_node->requires_grad ? nk_node->grad_accum() : nullptr;
      double* gv = nv_node->requires_grad ? nv_node->grad_accum() : nullptr;
      const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
      std::vector<double> dp(nk), ds(nk);
      for (int b = 0; b < B; ++b) {
        for (int h = 0; h < H; ++h) {
          const std::size_t base_q = (static_cast<std::size_t>(b) * H + h) * nq;
          const std::size_t base_k = (static_cast<std::size_t>(b) * H + h) * nk;
          for (int i = 0; i < nq; ++i) {
            const double* gr = g + (base_q + i) * dh;
            const double* pr = probs->data() + (base_q + i) * nk;
            const uint8_t* mr = m.allow.data() + static_cast<std::size_t>(i) * nk;
            // dL/dp_j = g . v_j ; dL/dv_j += p_j g
            double dot = 0.0;
            for (int j = 0; j < nk; ++j) {
              if (!mr[j]) continue;
              const double* vr = pv + (base_k + j) * dh;
              double a = 0.0;
              for (int d = 0; d < dh; ++d) a += gr[d] * vr[d];
              dp[j] = a;
              dot += a * pr[j];
              if (gv) {
                double* gvr = gv + (base_k + j) * dh;
                const double p = pr[j];
                for (int d = 0; d < dh; ++d) gvr[d] += p * gr[d];
              }
            }
            const double* qr = pq + (base_q + i) * dh;
            for (int j = 0; j < nk; ++j) {
              if (!mr[j]) continue;
              ds[j] = pr[j] * (dp[j] - dot) * scl;
            }
            if (gq) {
              double* gqr = gq + (base_q + i) * dh;
              for (int j = 0; j < nk; ++j) {
                if (!mr[j]) continue;
                const double* kr = pk + (base_k + j) * dh;
                const double c = ds[j];
                for (int d = 0; d < dh; ++d) gqr[d] += c * kr[d];
              }
            }
            if (gk) {
              for (int j = 0; j < nk; ++j) {
                if (!mr[j]) continue;
                double* gkr = gk + (base_k + j) * dh;
                const double c = ds[j];
                for (int d = 0; d < dh; ++d) gkr[d] += c * qr[d];
              }
            }
          }
        }
      }
    };
  }
  return Tensor(out);
}

Tensor attention_with_prefix(const Tensor& q, const Tensor& k_new, const Tensor& v_new,
                             const std::vector<double>& k_prefix,
                             const std::vector<double>& v_prefix, int n_prefix,
                             const BoolMatrix& mask) {
  check_attention_shapes(q, k_new, v_new, mask, n_prefix);
  mask.validate_no_empty_rows("attention_with_prefix");
  if (q.requires_grad() || k_new.requires_grad() || v_new.requires_grad()) {
    throw ConfigError("attention_with_prefix is forward-only; inputs must not require grad");
  }
  const int B = q.shape()[0], H = q.shape()[1], nq = q.shape()[2], dh = q.shape()[3];
  const int nk_new = k_new.shape()[2];
  const int nk = nk_new + n_prefix;
  if (B != 1) throw DimensionError("attention_with_prefix: batch must be 1");
  if (k_prefix.size() != static_cast<std::size_t>(H) * n_prefix * dh ||
      v_prefix.size() != static_cast<std::size_t>(H) * n_prefix * dh) {
    throw DimensionError("attention_with_prefix: prefix size mismatch");
  }

  auto out = make_node(q.shape());
  KvSegments keys{k_prefix.data(), n_prefix, k_new.data(), nk_new};
  KvSegments vals{v_prefix.data(), n_prefix, v_new.data(), nk_new};
  attention_forward_kernel(H, nq, nk, dh, q.data(), keys, vals, mask, out->owned.data(), nullptr);
  return Tensor(out);
}

// ---- activations ---------------------------------------------------------

namespace {
constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC1 = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
  auto out = make_node(x.shape());
  const double* px = x.data();
  for (std::size_t i = 0; i < out->size; ++i) {
    const double v = px[i];
    const double u = kGeluC0 * (v + kGeluC1 * v * v * v);
    out->owned[i] = 0.5 * v * (1.0 + std::tanh(u));
  }
  out->requires_grad = x.requires_grad();
  if (out->requires_grad) {
    out->parents = {x.node()};
    out->backprop = [](Node& self) {
      const double* g = self.grad.data();
      const double* px = self.parents[0]->data();
      double* gx = self.parents[0]->grad_accum();
      for (std::size_t i = 0; i < self.size; ++i) {
        const double v = px[i];
        const double u = kGeluC0 * (v + kGeluC1 * v * v * v);
        const double th = std::tanh(u);
        const double du = kGeluC0 * (1.0 + 3.0 * kGeluC1 * v * v);
        gx[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
      }
    };
  }
  return Tensor(out);
}

Tensor silu(const Tensor& x) {
  auto out = make_node(x.shape());
  const double* px = x.data();
  for (std::size_t i = 0; i < out->size; ++i) {
    const double v = px[i];
    out->owned[i] = v / (1.0 + std::exp(-v));
  }
  out->requires_grad = x.requires_grad();
  if (out->requires_grad) {
    out->parents = {x.node()};
    out->backprop = [](Node& self) {
      const double* g = self.grad.data();
      const double* px = self.parents[0]->data();
      double* gx = self.parents[0]->grad_accum();
      for (std::size_t i = 0; i < self.size; ++i) {
        const double s = 1.0 / (1.0 + std::exp(-px[i]));
        gx[i] += g[i] * s * (1.0 + px[i] * (1.0 - s));
      }
    };
  }
  return Tensor(out);
}

// ---- modulation -----------------------------------------------------------

Tensor row_affine(const Tensor& x, const Tensor& s, const Tensor& t) {
  const Shape& xs = x.shape();
  if (xs.size() != 2) throw DimensionError("row_affine: x must be 2-D, got " + shape_str(xs));
  const int n = xs[0], d = xs[1];
  if (s.size() != static_cast<std::size_t>(d) || t.size() != static_cast<std::size_t>(d)) {
    throw DimensionError("row_affine: scale/shift must have " + std::to_string(d) + " elements");
  }
  auto out = make_node(xs);
  const double* px = x.data();
  const double* ps = s.data();
  const double* pt = t.data();
  for (int m = 0; m < n; ++m) {
    const double* xr = px + static_cast<std::size_t>(m) * d;
    double* orow = out->owned.data() + static_cast<std::size_t>(m) * d;
    for (int i = 0; i < d; ++i) orow[i] = xr[i] * (1.0 + ps[i]) + pt[i];
  }
  out->requires_grad = x.requires_grad() || s.requires_grad() || t.requires_grad();
  if (out->requires_grad) {
    out->parents = {x.node(), s.node(), t.node()};
    out->backprop = [n, d](Node& self) {
      const double* g = self.grad.data();
      Node* nx = self.parents[0].get();
      Node* ns = self.parents[1].get();
      Node* nt = self.parents[2].get();
      if (nx->requires_grad) {
        double* gx = nx->grad_accum();
        const double* ps = ns->data();
        for (int m = 0; m < n; ++m) {
          for (int i = 0; i < d; ++i) {
            gx[static_cast<std::size_t>(m) * d + i] +=
                g[static_cast<std::size_t>(m) * d + i] * (1.0 + ps[i]);
          }
        }
      }
      if (ns->requires_grad) {
        double* gs = ns->grad_accum();
        const double* px = nx->data();
        for (int m = 0; m < n; ++m) {
          for (int i = 0; i < d; ++i) {
            gs[i] += g[static_cast<std::size_t>(m) * d + i] * px[static_cast<std::size_t>(m) * d + i];
          }
        }
      }
      if (nt->requires_grad) {
        double* gt = nt->grad_accum();
        for (int m = 0; m < n; ++m) {
          for (int i = 0; i < d; ++i) gt[i] += g[static_cast<std::size_t>(m) * d + i];
        }
      }
    };
  }
  return Tensor(out);
}

// ---- shape plumbing --------------------------------------------------

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: empty input");
  const int d = parts[0].shape().size() == 2 ? parts[0].shape()[1] : -1;
  if (d < 0) throw DimensionError("concat_rows: parts must be 2-D");
  int total = 0;
  bool grad = false;
  for (const Tensor& p : parts) {
    if (p.shape().size() != 2 || p.shape()[1] != d) {
      throw DimensionError("concat_rows: inconsistent part shape " + shape_str(p.shape()));
    }
    total += p.shape()[0];
    grad = grad || p.requires_grad();
  }
  auto out = make_node({total, d});
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data(), p.data() + p.size(), out->owned.begin() + off);
    off += p.size();
  }
  out->requires_grad = grad;
  if (grad) {
    for (const Tensor& p : parts) out->parents.push_back(p.node());
    out->backprop = [](Node& self) {
      const double* g = self.grad.data();
      std::size_t off = 0;
      for (auto& pn : self.parents) {
        if (pn->requires_grad) {
          double* pg = pn->grad_accum();
          for (std::size_t i = 0; i < pn->size; ++i) pg[i] += g[off + i];
        }
        off += pn->size;
      }
    };
  }
  return Tensor(out);
}

Tensor slice_rows(const Tensor& x, int r0, int r1) {
  const Shape& xs = x.shape();
  if (xs.size() != 2) throw DimensionError("slice_rows: x must be 2-D, got " + shape_str(xs));
  if (r0 < 0 || r1 > xs[0] || r0 >= r1) {
    throw DimensionError("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") invalid for " + shape_str(xs));
  }
  const int d = xs[1];
  auto out = make_node({r1 - r0, d});
  std::copy(x.data() + static_cast<std::size_t>(r0) * d, x.data() + static_cast<std::size_t>(r1) * d,
            out->owned.begin());
  out->requires_grad = x.requires_grad();
  if (out->requires_grad) {
    out->parents = {x.node()};
    out->backprop = [r0, d](Node& self) {
      const double* g = self.grad.data();
      double* pg = self.parents[0]->grad_accum();
      for (std::size_t i = 0; i < self.size; ++i) pg[static_cast<std::size_t>(r0) * d + i] += g[i];
    };
  }
  return Tensor(out);
}

Tensor split_heads(const Tensor& x, int n_heads) {
  const Shape& xs = x.shape();
  if (xs.size() != 2) throw DimensionError("split_heads: x must be 2-D, got " + shape_str(xs));
  const int n = xs[0], dm = xs[1];
  if (dm % n_heads != 0) {
    throw DimensionError("split_heads: model dim " + std::to_string(dm) + " not divisible by " +
                         std::to_string(n_heads) + " heads");
  }
  const int dh = dm / n_heads;
  auto out = make_node({1, n_heads, n, dh});
  const double* px = x.data();
  for (int h = 0; h < n_heads; ++h) {
    for (int i = 0; i < n; ++i) {
      const double* src = px + static_cast<std::size_t>(i) * dm + static_cast<std::size_t>(h) * dh;
      double* dst = out->owned.data() + (static_cast<std::size_t>(h) * n + i) * dh;
      std::copy(src, src + dh, dst);
    }
  }
  out->requires_grad = x.requires_grad();
  if (out->requires_grad) {
    out->parents = {x.node()};
    out->backprop = [n_heads, n, dm, dh](Node& self) {
      const double* g = self.grad.data();
      double* pg = self.parents[0]->grad_accum();
      for (int h = 0; h < n_heads; ++h) {
        for (int i = 0; i < n; ++i) {
          const double* src = g + (static_cast<std::size_t>(h) * n + i) * dh;
          double* dst = pg + static_cast<std::size_t>(i) * dm + static_cast<std::size_t>(h) * dh;
          for (int d = 0; d < dh; ++d) dst[d] += src[d];
        }
      }
    };
  }
  return Tensor(out);
}

Tensor merge_heads(const Tensor& x) {
  const Shape& xs = x.shape();
  if (xs.size() != 4 || xs[0] != 1) {
    throw DimensionError("merge_heads: x must be [1,H,N,dh], got " + shape_str(xs));
  }
  const int H = xs[1], n = xs[2], dh = xs[3];
  const int dm = H * dh;
  auto out = make_node({n, dm});
  const double* px = x.data();
  for (int h = 0; h < H; ++h) {
    for (int i = 0; i < n; ++i) {
      const double* src = px + (static_cast<std::size_t>(h) * n + i) * dh;
      double* dst = out->owned.data() + static_cast<std::size_t>(i) * dm + static_cast<std::size_t>(h) * dh;
      std::copy(src, src + dh, dst);
    }
  }
  out->requires_grad = x.requires_grad();
  if (out->requires_grad) {
    out->parents = {x.node()};
    out->backprop = [H, n, dh, dm](Node& self) {
      const double* g = self.grad.data();
      double* pg = self.parents[0]->grad_accum();
      for (int h = 0; h < H; ++h) {
        for (int i = 0; i < n; ++i) {
          double* dst = pg + (static_cast<std::size_t>(h) * n + i) * dh;
          const double* src = g + static_cast<std::size_t>(i) * dm + static_cast<std::size_t>(h) * dh;
          for (int d = 0; d < dh; ++d) dst[d] += src[d];
        }
      }
    };
  }
  return Tensor(out);
}

Tensor select_row(const Tensor& table, int row) {
  const Shape& ts = table.shape();
  if (ts.size() != 2) throw DimensionError("select_row: table must be 2-D, got " + shape_str(ts));
  if (row < 0 || row >= ts[0]) {
    throw DimensionError("select_row: row " + std::to_string(row) + " out of range for " +
                         shape_str(ts));
  }
  const int c = ts[1];
  auto out = make_node({1, c});
  std::copy(table.data() + static_cast<std::size_t>(row) * c,
            table.data() + static_cast<std::size_t>(row + 1) * c, out->owned.begin());
  out->requires_grad = table.requires_grad();
  if (out->requires_grad) {
    out->parents = {table.node()};
    out->backprop = [row, c](Node& self) {
      const double* g = self.grad.data();
      double* pg = self.parents[0]->grad_accum();
      for (int i = 0; i < c; ++i) pg[static_cast<std::size_t>(row) * c + i] += g[i];
    };
  }
  return Tensor(out);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  auto out = std::make_shared<Node>();
  out->shape = std::move(shape);
  out->size = x.size();
  out->view = x.data();
  out->requires_grad = x.requires_grad();
  out->parents = {x.node()};
  if (out->requires_grad) {
    out->backprop = [](Node& self) {
      const double* g = self.grad.data();
      double* pg = self.parents[0]->grad_accum();
      for (std::size_t i = 0; i < self.size; ++i) pg[i] += g[i];
    };
  }
  return Tensor(out);
}

// ---- losses ----------------------------------------------------------

Tensor mse_masked(const Tensor& pred, const std::vector<double>& target,
                  const std::vector<uint8_t>* valid) {
  if (pred.size() != target.size()) {
    throw DimensionError("mse_masked: pred has " + std::to_string(pred.size()) +
                         " elements, target has " + std::to_string(target.size()));
  }
  if (valid && valid->size() != pred.size()) {
    throw DimensionError("mse_masked: valid mask size mismatch");
  }
  std::size_t n_valid = 0;
  if (valid) {
    for (uint8_t v : *valid) n_valid += v ? 1 : 0;
  } else {
    n_valid = pred.size();
  }
  if (n_valid == 0) throw ConfigError("mse_masked: empty valid set");

  auto out = make_node({1});
  const double* pp = pred.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (valid && !(*valid)[i]) continue;
    const double d = pp[i] - target[i];
    acc += d * d;
  }
  out->owned[0] = acc / static_cast<double>(n_valid);

  out->requires_grad = pred.requires_grad();
  if (out->requires_grad) {
    auto tgt = std::make_shared<std::vector<double>>(target);
    std::shared_ptr<std::vector<uint8_t>> msk;
    if (valid) msk = std::make_shared<std::vector<uint8_t>>(*valid);
    out->parents = {pred.node()};
    out->backprop = [tgt, msk, n_valid](Node& self) {
      const double g = self.grad[0];
      Node* p = self.parents[0].get();
      const double* pp = p->data();
      double* pg = p->grad_accum();
      const double c = 2.0 * g / static_cast<double>(n_valid);
      for (std::size_t i = 0; i < p->size; ++i) {
        if (msk && !(*msk)[i]) continue;
        pg[i] += c * (pp[i] - (*tgt)[i]);
      }
    };
  }
  return Tensor(out);
}

Tensor sum(const Tensor& x) {
  auto out = make_node({1});
  const double* px = x.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += px[i];
  out->owned[0] = acc;
  out->requires_grad = x.requires_grad();
  if (out->requires_grad) {
    out->parents = {x.node()};
    out->backprop = [](Node& self) {
      const double g = self.grad[0];
      double* pg = self.parents[0]->grad_accum();
      for (std::size_t i = 0; i < self.parents[0]->size; ++i) pg[i] += g;
    };
  }
  return Tensor(out);
}

}  // namespace fastwam
