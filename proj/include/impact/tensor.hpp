#pragma once

// Dense double-precision tensors with reverse-mode autodiff on a dynamic
// tape. Only the primitives the incident-impact model needs: matmul,
// batched matmul, masked softmax, layer norm, dropout, leaky relu, L1
// losses and a handful of shape/reduction ops. Row-major throughout.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace impact {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on first use during backward
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_op;  // pushes self.grad into parents

  std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// Disables tape recording in scope; forwards run without graph bookkeeping.
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), 0.0, requires_grad);
  }

  static Tensor filled(Shape shape, double v, bool requires_grad = false) {
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value.assign(static_cast<std::size_t>(shape_numel(n->shape)), v);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
      throw std::invalid_argument("tensor data length " +
                                  std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0,
                      bool requires_grad = false) {
    std::normal_distribution<double> dist(0.0, stddev);
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value.resize(static_cast<std::size_t>(shape_numel(n->shape)));
    for (auto& x : n->value) x = dist(rng);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const {
    if (i < 0) i += ndim();
    return node_->shape[static_cast<std::size_t>(i)];
  }
  std::int64_t numel() const { return node_->numel(); }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<double>& data() const { return node_->value; }
  // Direct mutation is reserved for leaf tensors (optimizer updates,
  // in-place init). Mutating an interior node would corrupt the tape.
  std::vector<double>& leaf_data() {
    if (node_->backward_op)
      throw std::logic_error("leaf_data() called on non-leaf tensor");
    return node_->value;
  }

  const std::vector<double>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  double item() const {
    if (numel() != 1)
      throw std::invalid_argument("item() on tensor of shape " +
                                  shape_str(shape()));
    return node_->value[0];
  }

  double at(std::initializer_list<int> idx) const {
    return node_->value[flat_index(idx)];
  }

  // Runs reverse-mode accumulation from this scalar into every tracked leaf.
  void backward() const;

  detail::NodePtr node() const { return node_; }
  explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}

 private:
  std::size_t flat_index(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != ndim())
      throw std::invalid_argument("index rank mismatch");
    std::size_t flat = 0;
    int i = 0;
    for (int v : idx) {
      flat = flat * static_cast<std::size_t>(node_->shape[i]) +
             static_cast<std::size_t>(v);
      ++i;
    }
    return flat;
  }

  detail::NodePtr node_;
};

namespace detail {

inline Tensor make_result(Shape shape, std::vector<double> value,
                          std::vector<Tensor> parents,
                          std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool track = grad_mode();
  bool any = false;
  if (track)
    for (const auto& p : parents) any = any || p.requires_grad();
  n->requires_grad = track && any;
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_op = std::move(backward);
  }
  return Tensor(std::move(n));
}

inline void check_same_shape(const Tensor& a, const Tensor& b,
                             const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

}  // namespace detail

inline void Tensor::backward() const {
  if (numel() != 1)
    throw std::invalid_argument(
        "backward() requires a scalar loss, got shape " + shape_str(shape()));
  using detail::Node;
  // Iterative post-order DFS: children complete before parents.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order) n->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_op) n->backward_op(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise / affine primitives
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<double> out(a.data());
  const auto& bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return detail::make_result(a.shape(), std::move(out), {a, b},
                             [](detail::Node& self) {
                               for (int k = 0; k < 2; ++k) {
                                 auto& p = *self.parents[k];
                                 if (!p.requires_grad) continue;
                                 p.ensure_grad();
                                 for (std::size_t i = 0; i < self.grad.size();
                                      ++i)
                                   p.grad[i] += self.grad[i];
                               }
                             });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<double> out(a.data());
  const auto& bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return detail::make_result(
      a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        auto& pa = *self.parents[0];
        if (pa.requires_grad) {
          pa.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pa.grad[i] += self.grad[i];
        }
        auto& pb = *self.parents[1];
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pb.grad[i] -= self.grad[i];
        }
      });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> out(a.data());
  const auto& bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return detail::make_result(
      a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
          pa.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pa.grad[i] += self.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pb.grad[i] += self.grad[i] * pa.value[i];
        }
      });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data());
  for (auto& x : out) x *= s;
  return detail::make_result(a.shape(), std::move(out), {a},
                             [s](detail::Node& self) {
                               auto& p = *self.parents[0];
                               p.ensure_grad();
                               for (std::size_t i = 0; i < self.grad.size();
                                    ++i)
                                 p.grad[i] += s * self.grad[i];
                             });
}

// x: [..., C] plus bias over the last axis.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.ndim() != 1 || bias.dim(0) != x.dim(-1))
    throw std::invalid_argument("add_bias: bias " + shape_str(bias.shape()) +
                                " does not match last dim of " +
                                shape_str(x.shape()));
  const int c = x.dim(-1);
  std::vector<double> out(x.data());
  const auto& bv = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] += bv[i % static_cast<std::size_t>(c)];
  return detail::make_result(
      x.shape(), std::move(out), {x, bias}, [c](detail::Node& self) {
        auto& px = *self.parents[0];
        if (px.requires_grad) {
          px.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            px.grad[i] += self.grad[i];
        }
        auto& pb = *self.parents[1];
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pb.grad[i % static_cast<std::size_t>(c)] += self.grad[i];
        }
      });
}

inline Tensor leaky_relu(const Tensor& x, double slope) {
  std::vector<double> out(x.data());
  for (auto& v : out)
    if (v < 0.0) v *= slope;
  return detail::make_result(
      x.shape(), std::move(out), {x}, [slope](detail::Node& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          p.grad[i] += self.grad[i] * (p.value[i] >= 0.0 ? 1.0 : slope);
      });
}

// Training mode zeroes entries with probability p and rescales survivors by
// 1/(1-p); inference returns the input tensor unchanged (same node).
inline Tensor dropout(const Tensor& x, double p, bool training,
                      std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0)
    throw std::invalid_argument("dropout: p must be in [0,1), got " +
                                std::to_string(p));
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto mask = std::make_shared<std::vector<std::uint8_t>>(x.data().size());
  std::vector<double> out(x.data());
  for (std::size_t i = 0; i < out.size(); ++i) {
    bool keep = u(rng) >= p;
    (*mask)[i] = keep;
    out[i] = keep ? out[i] * keep_scale : 0.0;
  }
  return detail::make_result(x.shape(), std::move(out), {x},
                             [mask, keep_scale](detail::Node& self) {
                               auto& p0 = *self.parents[0];
                               p0.ensure_grad();
                               for (std::size_t i = 0; i < self.grad.size();
                                    ++i)
                                 if ((*mask)[i])
                                   p0.grad[i] += self.grad[i] * keep_scale;
                             });
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

namespace detail {

// C[m x n] += A[m x k] * B[k x n], optional transposes on views.
inline void gemm_acc(const double* a, const double* b, double* c, int m,
                     int k, int n, bool ta, bool tb) {
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double av = ta ? a[static_cast<std::size_t>(p) * m + i]
                           : a[static_cast<std::size_t>(i) * k + p];
      if (av == 0.0) continue;
      const double* brow = tb ? nullptr : b + static_cast<std::size_t>(p) * n;
      double* crow = c + static_cast<std::size_t>(i) * n;
      if (!tb) {
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (int j = 0; j < n; ++j)
          crow[j] += av * b[static_cast<std::size_t>(j) * k + p];
      }
    }
  }
}

}  // namespace detail

// a: [..., k] (leading axes collapse to rows), b: [k, n] -> [..., n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 1 || b.ndim() != 2)
    throw std::invalid_argument("matmul: expects a [..,k] and b [k,n], got " +
                                shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  const int k = a.dim(-1);
  if (k != b.dim(0))
    throw std::invalid_argument("matmul: inner dimensions differ, " +
                                shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  const int n = b.dim(1);
  const int m = static_cast<int>(a.numel() / k);
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  detail::gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n,
                   false, false);
  return detail::make_result(
      std::move(out_shape), std::move(out), {a, b},
      [m, k, n](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
          pa.ensure_grad();
          // dA = dC * B^T
          detail::gemm_acc(self.grad.data(), pb.value.data(), pa.grad.data(),
                           m, n, k, false, true);
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          // dB = A^T * dC
          detail::gemm_acc(pa.value.data(), self.grad.data(), pb.grad.data(),
                           k, m, n, true, false);
        }
      });
}

// Batched product over axis 0. a: [B,m,k]; b: [B,k,n] (or [B,n,k] with
// transpose_b). Used for attention logits and weight application.
inline Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0))
    throw std::invalid_argument("bmm: expects [B,m,k] x [B,k,n], got " +
                                shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  const int bs = a.dim(0), m = a.dim(1), k = a.dim(2);
  const int n = transpose_b ? b.dim(1) : b.dim(2);
  const int bk = transpose_b ? b.dim(2) : b.dim(1);
  if (bk != k)
    throw std::invalid_argument("bmm: inner dimensions differ, " +
                                shape_str(a.shape()) + " x " +
                                shape_str(b.shape()) +
                                (transpose_b ? " (b transposed)" : ""));
  std::vector<double> out(static_cast<std::size_t>(bs) * m * n, 0.0);
  const std::size_t sa = static_cast<std::size_t>(m) * k;
  const std::size_t sb = static_cast<std::size_t>(b.dim(1)) * b.dim(2);
  const std::size_t sc = static_cast<std::size_t>(m) * n;
  for (int i = 0; i < bs; ++i)
    detail::gemm_acc(a.data().data() + i * sa, b.data().data() + i * sb,
                     out.data() + i * sc, m, k, n, false, transpose_b);
  return detail::make_result(
      Shape{bs, m, n}, std::move(out), {a, b},
      [bs, m, k, n, sa, sb, sc, transpose_b](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (int i = 0; i < bs; ++i) {
          const double* dz = self.grad.data() + i * sc;
          if (pa.requires_grad) {
            pa.ensure_grad();
            // C = A B^T: dA = dC B ; C = A B: dA = dC B^T
            detail::gemm_acc(dz, pb.value.data() + i * sb,
                             pa.grad.data() + i * sa, m, n, k, false,
                             !transpose_b);
          }
          if (pb.requires_grad) {
            pb.ensure_grad();
            if (transpose_b)
              // C = A B^T: dB = dC^T A
              detail::gemm_acc(dz, pa.value.data() + i * sa,
                               pb.grad.data() + i * sb, n, m, k, true, false);
            else
              // C = A B: dB = A^T dC
              detail::gemm_acc(pa.value.data() + i * sa, dz,
                               pb.grad.data() + i * sb, k, m, n, true, false);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Softmax, layer norm, reductions
// ---------------------------------------------------------------------------

// Row-wise softmax over the last axis with an optional binary mask shared
// over leading axes. Masked entries are exactly 0; a fully masked row yields
// an all-zero row (and propagates zero gradient).
inline Tensor masked_softmax(const Tensor& logits, const Tensor& mask) {
  const bool has_mask = mask.defined();
  if (has_mask) {
    if (logits.ndim() < 2)
      throw std::invalid_argument(
          "masked_softmax: masked input must have >= 2 dims, got " +
          shape_str(logits.shape()));
    if (mask.ndim() != 2 || mask.dim(0) != logits.dim(-2) ||
        mask.dim(1) != logits.dim(-1))
      throw std::invalid_argument("masked_softmax: mask " +
                                  shape_str(mask.shape()) +
                                  " does not match rows of " +
                                  shape_str(logits.shape()));
    for (double v : mask.data())
      if (v != 0.0 && v != 1.0)
        throw std::invalid_argument(
            "masked_softmax: mask entries must be 0 or 1, found " +
            std::to_string(v));
  }
  const int c = logits.dim(-1);
  const std::size_t rows = static_cast<std::size_t>(logits.numel() / c);
  const std::size_t mask_rows =
      has_mask ? static_cast<std::size_t>(mask.dim(0)) : 0;
  std::vector<double> out(logits.data().size(), 0.0);
  const auto& x = logits.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * c;
    double* yr = out.data() + r * c;
    const double* mr =
        has_mask ? mask.data().data() + (r % mask_rows) * c : nullptr;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j)
      if (!mr || mr[j] == 1.0) mx = std::max(mx, xr[j]);
    if (mx == -std::numeric_limits<double>::infinity()) continue;  // all masked
    double sum = 0.0;
    for (int j = 0; j < c; ++j) {
      if (mr && mr[j] == 0.0) continue;
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (int j = 0; j < c; ++j) yr[j] /= sum;
  }
  std::vector<Tensor> parents = {logits};
  return detail::make_result(
      logits.shape(), std::move(out), std::move(parents),
      [c, rows](detail::Node& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* yr = self.value.data() + r * c;
          const double* dyr = self.grad.data() + r * c;
          double dot = 0.0;
          for (int j = 0; j < c; ++j) dot += yr[j] * dyr[j];
          double* dxr = p.grad.data() + r * c;
          for (int j = 0; j < c; ++j) dxr[j] += yr[j] * (dyr[j] - dot);
        }
      });
}

inline Tensor softmax(const Tensor& logits) {
  return masked_softmax(logits, Tensor());
}

// Normalizes over the last axis; epsilon 1e-5 inside the square root.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain,
                         const Tensor& bias) {
  const int c = x.dim(-1);
  if (gain.ndim() != 1 || gain.dim(0) != c || bias.ndim() != 1 ||
      bias.dim(0) != c)
    throw std::invalid_argument("layer_norm: gain/bias must be [" +
                                std::to_string(c) + "], got " +
                                shape_str(gain.shape()) + " and " +
                                shape_str(bias.shape()));
  constexpr double kEps = 1e-5;
  const std::size_t rows = static_cast<std::size_t>(x.numel() / c);
  std::vector<double> out(x.data().size());
  auto mu = std::make_shared<std::vector<double>>(rows);
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const auto& xv = x.data();
  const auto& gv = gain.data();
  const auto& bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * c;
    double m = 0.0;
    for (int j = 0; j < c; ++j) m += xr[j];
    m /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (xr[j] - m) * (xr[j] - m);
    var /= c;
    const double is = 1.0 / std::sqrt(var + kEps);
    (*mu)[r] = m;
    (*inv_std)[r] = is;
    double* yr = out.data() + r * c;
    for (int j = 0; j < c; ++j) yr[j] = (xr[j] - m) * is * gv[j] + bv[j];
  }
  return detail::make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [c, rows, mu, inv_std](detail::Node& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto& gv = pg.value;
        for (std::size_t r = 0; r < rows; ++r) {
          const double* xr = px.value.data() + r * c;
          const double* dyr = self.grad.data() + r * c;
          const double m = (*mu)[r], is = (*inv_std)[r];
          if (pg.requires_grad || pb.requires_grad) {
            pg.ensure_grad();
            pb.ensure_grad();
            for (int j = 0; j < c; ++j) {
              pg.grad[j] += dyr[j] * (xr[j] - m) * is;
              pb.grad[j] += dyr[j];
            }
          }
          if (px.requires_grad) {
            px.ensure_grad();
            double sum_g = 0.0, sum_gx = 0.0;
            for (int j = 0; j < c; ++j) {
              const double g = dyr[j] * gv[j];
              sum_g += g;
              sum_gx += g * (xr[j] - m) * is;
            }
            double* dxr = px.grad.data() + r * c;
            for (int j = 0; j < c; ++j) {
              const double g = dyr[j] * gv[j];
              const double xh = (xr[j] - m) * is;
              dxr[j] += is * (g - sum_g / c - xh * sum_gx / c);
            }
          }
        }
      });
}

enum class Reduction { Mean, Sum };

// Mean (or sum) of absolute differences. Subgradient at zero difference is 0.
inline Tensor l1_loss(const Tensor& pred, const Tensor& target,
                      Reduction red = Reduction::Mean) {
  detail::check_same_shape(pred, target, "l1_loss");
  const auto& a = pred.data();
  const auto& b = target.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
  const double inv =
      red == Reduction::Mean ? 1.0 / static_cast<double>(a.size()) : 1.0;
  return detail::make_result(
      Shape{1}, {acc * inv}, {pred, target}, [inv](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const double g = self.grad[0] * inv;
        for (std::size_t i = 0; i < pa.value.size(); ++i) {
          const double d = pa.value[i] - pb.value[i];
          const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
          if (pa.requires_grad) {
            pa.ensure_grad();
            pa.grad[i] += g * s;
          }
          if (pb.requires_grad) {
            pb.ensure_grad();
            pb.grad[i] -= g * s;
          }
        }
      });
}

inline Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return detail::make_result(Shape{1}, {acc}, {x}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (auto& g : p.grad) g += self.grad[0];
  });
}

namespace detail {

inline void axis_strides(const Shape& s, int axis, std::size_t& outer,
                         std::size_t& n, std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(s[i]);
  n = static_cast<std::size_t>(s[axis]);
  for (std::size_t i = axis + 1; i < s.size(); ++i)
    inner *= static_cast<std::size_t>(s[i]);
}

}  // namespace detail

inline Tensor reduce_sum(const Tensor& x, int axis) {
  if (axis < 0) axis += x.ndim();
  if (axis < 0 || axis >= x.ndim())
    throw std::invalid_argument("reduce_sum: axis out of range");
  std::size_t outer, n, inner;
  detail::axis_strides(x.shape(), axis, outer, n, inner);
  Shape out_shape;
  for (int i = 0; i < x.ndim(); ++i)
    if (i != axis) out_shape.push_back(x.dim(i));
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<double> out(outer * inner, 0.0);
  const auto& xv = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += xv[(o * n + j) * inner + i];
  return detail::make_result(std::move(out_shape), std::move(out), {x},
                             [outer, n, inner](detail::Node& self) {
                               auto& p = *self.parents[0];
                               p.ensure_grad();
                               for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t j = 0; j < n; ++j)
                                   for (std::size_t i = 0; i < inner; ++i)
                                     p.grad[(o * n + j) * inner + i] +=
                                         self.grad[o * inner + i];
                             });
}

inline Tensor reduce_mean(const Tensor& x, int axis) {
  if (axis < 0) axis += x.ndim();
  return scale(reduce_sum(x, axis), 1.0 / x.dim(axis));
}

// Inserts a new axis of size n at `axis`, repeating the input. The gradient
// sums over the inserted axis.
inline Tensor expand(const Tensor& x, int axis, int n) {
  if (axis < 0 || axis > x.ndim())
    throw std::invalid_argument("expand: axis out of range");
  Shape out_shape = x.shape();
  out_shape.insert(out_shape.begin() + axis, n);
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(x.dim(i));
  for (int i = axis; i < x.ndim(); ++i)
    inner *= static_cast<std::size_t>(x.dim(i));
  std::vector<double> out(outer * static_cast<std::size_t>(n) * inner);
  const auto& xv = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (int j = 0; j < n; ++j)
      std::copy(xv.begin() + o * inner, xv.begin() + (o + 1) * inner,
                out.begin() + (o * n + j) * inner);
  return detail::make_result(
      std::move(out_shape), std::move(out), {x},
      [outer, n, inner](detail::Node& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t o = 0; o < outer; ++o)
          for (int j = 0; j < n; ++j)
            for (std::size_t i = 0; i < inner; ++i)
              p.grad[o * inner + i] += self.grad[(o * n + j) * inner + i];
      });
}

inline Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  if (axis < 0) axis += a.ndim();
  if (a.ndim() != b.ndim())
    throw std::invalid_argument("concat: rank mismatch");
  for (int i = 0; i < a.ndim(); ++i)
    if (i != axis && a.dim(i) != b.dim(i))
      throw std::invalid_argument("concat: shapes " + shape_str(a.shape()) +
                                  " and " + shape_str(b.shape()) +
                                  " differ off axis " + std::to_string(axis));
  std::size_t outer, na, inner;
  detail::axis_strides(a.shape(), axis, outer, na, inner);
  const std::size_t nb = static_cast<std::size_t>(b.dim(axis));
  Shape out_shape = a.shape();
  out_shape[axis] = static_cast<int>(na + nb);
  std::vector<double> out(a.numel() + b.numel());
  const auto& av = a.data();
  const auto& bv = b.data();
  const std::size_t arow = na * inner, brow = nb * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(av.begin() + o * arow, av.begin() + (o + 1) * arow,
              out.begin() + o * (arow + brow));
    std::copy(bv.begin() + o * brow, bv.begin() + (o + 1) * brow,
              out.begin() + o * (arow + brow) + arow);
  }
  return detail::make_result(
      std::move(out_shape), std::move(out), {a, b},
      [outer, arow, brow](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (std::size_t o = 0; o < outer; ++o) {
          const double* dz = self.grad.data() + o * (arow + brow);
          if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < arow; ++i)
              pa.grad[o * arow + i] += dz[i];
          }
          if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < brow; ++i)
              pb.grad[o * brow + i] += dz[arow + i];
          }
        }
      });
}

inline Tensor slice(const Tensor& x, int axis, int start, int len) {
  if (axis < 0) axis += x.ndim();
  if (axis < 0 || axis >= x.ndim() || start < 0 || len <= 0 ||
      start + len > x.dim(axis))
    throw std::invalid_argument("slice: range [" + std::to_string(start) +
                                "," + std::to_string(start + len) +
                                ") invalid for axis " + std::to_string(axis) +
                                " of " + shape_str(x.shape()));
  std::size_t outer, n, inner;
  detail::axis_strides(x.shape(), axis, outer, n, inner);
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  std::vector<double> out(outer * static_cast<std::size_t>(len) * inner);
  const auto& xv = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy(xv.begin() + (o * n + start) * inner,
              xv.begin() + (o * n + start + len) * inner,
              out.begin() + o * len * inner);
  return detail::make_result(
      std::move(out_shape), std::move(out), {x},
      [outer, n, inner, start, len](detail::Node& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < static_cast<std::size_t>(len); ++j)
            for (std::size_t i = 0; i < inner; ++i)
              p.grad[(o * n + start + j) * inner + i] +=
                  self.grad[(o * len + j) * inner + i];
      });
}

// Swaps the first two axes of a 3-D tensor.
inline Tensor swap01(const Tensor& x) {
  if (x.ndim() != 3)
    throw std::invalid_argument("swap01: expects a 3-D tensor, got " +
                                shape_str(x.shape()));
  const int a = x.dim(0), b = x.dim(1), c = x.dim(2);
  std::vector<double> out(x.data().size());
  const auto& xv = x.data();
  for (int i = 0; i < a; ++i)
    for (int j = 0; j < b; ++j)
      std::copy(xv.begin() + (static_cast<std::size_t>(i) * b + j) * c,
                xv.begin() + (static_cast<std::size_t>(i) * b + j + 1) * c,
                out.begin() + (static_cast<std::size_t>(j) * a + i) * c);
  return detail::make_result(
      Shape{b, a, c}, std::move(out), {x}, [a, b, c](detail::Node& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (int j = 0; j < b; ++j)
          for (int i = 0; i < a; ++i) {
            const double* src =
                self.grad.data() + (static_cast<std::size_t>(j) * a + i) * c;
            double* dst =
                p.grad.data() + (static_cast<std::size_t>(i) * b + j) * c;
            for (int k = 0; k < c; ++k) dst[k] += src[k];
          }
      });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw std::invalid_argument("reshape: cannot view " +
                                shape_str(x.shape()) + " as " +
                                shape_str(shape));
  std::vector<double> out(x.data());
  return detail::make_result(std::move(shape), std::move(out), {x},
                             [](detail::Node& self) {
                               auto& p = *self.parents[0];
                               p.ensure_grad();
                               for (std::size_t i = 0; i < self.grad.size();
                                    ++i)
                                 p.grad[i] += self.grad[i];
                             });
}

inline bool all_finite(const Tensor& x) {
  for (double v : x.data())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace impact
