#pragma once

// Reverse-mode automatic differentiation on dense tensors.
//
// A Value wraps a graph node holding the forward tensor and, after
// backward(), its gradient. Graphs are built dynamically per step and
// freed when the last Value handle drops. Parameters are long-lived
// leaf Values; zero their grads between steps.
//
// Determinism contract: every op assigns each output (and each gradient)
// element from exactly one task, so results are bit-stable regardless of
// thread count. Reductions over parallel partials run in index order.

#include <Eigen/Core>
#include <cassert>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "flowface/tensor.hpp"

namespace flowface::ad {

template <typename T>
struct Node {
  Tensor<T> val;
  Tensor<T> grad;  // allocated lazily during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backfn;  // accumulates into parents' grads

  Tensor<T>& ensure_grad() {
    if (grad.numel() != val.numel()) grad = Tensor<T>(val.shape());
    return grad;
  }
};

template <typename T>
class Value {
 public:
  Value() = default;
  explicit Value(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

  static Value leaf(Tensor<T> t) {
    auto n = std::make_shared<Node<T>>();
    n->val = std::move(t);
    n->requires_grad = true;
    return Value(std::move(n));
  }
  static Value constant(Tensor<T> t) {
    auto n = std::make_shared<Node<T>>();
    n->val = std::move(t);
    return Value(std::move(n));
  }

  bool defined() const { return bool(n_); }
  const Tensor<T>& val() const { return n_->val; }
  Tensor<T>& mutable_val() { return n_->val; }
  const Tensor<T>& grad() const { return n_->grad; }
  bool requires_grad() const { return n_->requires_grad; }
  const std::vector<int>& shape() const { return n_->val.shape(); }
  std::shared_ptr<Node<T>> node() const { return n_; }

  void zero_grad() {
    if (n_->grad.numel() != n_->val.numel()) n_->grad = Tensor<T>(n_->val.shape());
    else n_->grad.fill(T(0));
  }

  /// Runs reverse-mode accumulation from this scalar node.
  void backward() const {
    require_config(n_->val.numel() == 1, "backward() needs a scalar root");
    // Iterative topological order; graph depth can reach thousands of
    // nodes (fixed-point solver iterations), so no recursion.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, size_t>> stack;
    stack.push_back({n_.get(), 0});
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx == 0 && seen.count(node)) {
        stack.pop_back();
        continue;
      }
      if (idx < node->parents.size()) {
        Node<T>* p = node->parents[idx].get();
        ++idx;
        if (!seen.count(p) && p->requires_grad) stack.push_back({p, 0});
      } else {
        seen.insert(node);
        order.push_back(node);
        stack.pop_back();
      }
    }
    for (Node<T>* node : order) node->ensure_grad().fill(T(0));
    n_->ensure_grad()[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* node = *it;
      if (node->backfn && node->requires_grad) node->backfn(*node);
    }
  }

 private:
  std::shared_ptr<Node<T>> n_;
};

namespace detail {

template <typename T>
std::shared_ptr<Node<T>> make_node(Tensor<T> val,
                                   std::vector<std::shared_ptr<Node<T>>> parents,
                                   std::function<void(Node<T>&)> backfn) {
  auto n = std::make_shared<Node<T>>();
  n->val = std::move(val);
  for (auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backfn = std::move(backfn);
  }
  return n;
}

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

}  // namespace detail

// ---- elementwise arithmetic ----

template <typename T>
Value<T> add(const Value<T>& a, const Value<T>& b) {
  require_config(a.val().same_shape(b.val()), "add: shape mismatch");
  Tensor<T> out(a.shape());
  const T* pa = a.val().data();
  const T* pb = b.val().data();
  T* po = out.data();
  for (size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
  auto an = a.node(); auto bn = b.node();
  return Value<T>(detail::make_node<T>(std::move(out), {an, bn}, [an, bn](Node<T>& n) {
    if (an->requires_grad) {
      T* g = an->ensure_grad().data();
      const T* gy = n.grad.data();
      for (size_t i = 0; i < n.grad.numel(); ++i) g[i] += gy[i];
    }
    if (bn->requires_grad) {
      T* g = bn->ensure_grad().data();
      const T* gy = n.grad.data();
      for (size_t i = 0; i < n.grad.numel(); ++i) g[i] += gy[i];
    }
  }));
}

template <typename T>
Value<T> sub(const Value<T>& a, const Value<T>& b) {
  require_config(a.val().same_shape(b.val()), "sub: shape mismatch");
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] - b.val()[i];
  auto an = a.node(); auto bn = b.node();
  return Value<T>(detail::make_node<T>(std::move(out), {an, bn}, [an, bn](Node<T>& n) {
    if (an->requires_grad) {
      T* g = an->ensure_grad().data();
      for (size_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      T* g = bn->ensure_grad().data();
      for (size_t i = 0; i < n.grad.numel(); ++i) g[i] -= n.grad[i];
    }
  }));
}

template <typename T>
Value<T> mul(const Value<T>& a, const Value<T>& b) {
  require_config(a.val().same_shape(b.val()), "mul: shape mismatch");
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] * b.val()[i];
  auto an = a.node(); auto bn = b.node();
  return Value<T>(detail::make_node<T>(std::move(out), {an, bn}, [an, bn](Node<T>& n) {
    if (an->requires_grad) {
      T* g = an->ensure_grad().data();
      for (size_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i] * bn->val[i];
    }
    if (bn->requires_grad) {
      T* g = bn->ensure_grad().data();
      for (size_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i] * an->val[i];
    }
  }));
}

template <typename T>
Value<T> div(const Value<T>& a, const Value<T>& b) {
  require_config(a.val().same_shape(b.val()), "div: shape mismatch");
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] / b.val()[i];
  auto an = a.node(); auto bn = b.node();
  return Value<T>(detail::make_node<T>(std::move(out), {an, bn}, [an, bn](Node<T>& n) {
    if (an->requires_grad) {
      T* g = an->ensure_grad().data();
      for (size_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i] / bn->val[i];
    }
    if (bn->requires_grad) {
      T* g = bn->ensure_grad().data();
      for (size_t i = 0; i < n.grad.numel(); ++i)
        g[i] -= n.grad[i] * an->val[i] / (bn->val[i] * bn->val[i]);
    }
  }));
}

template <typename T>
Value<T> mul_scalar(const Value<T>& a, T c) {
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] * c;
  auto an = a.node();
  return Value<T>(detail::make_node<T>(std::move(out), {an}, [an, c](Node<T>& n) {
    T* g = an->ensure_grad().data();
    for (size_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i] * c;
  }));
}

template <typename T>
Value<T> add_scalar(const Value<T>& a, T c) {
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] + c;
  auto an = a.node();
  return Value<T>(detail::make_node<T>(std::move(out), {an}, [an](Node<T>& n) {
    T* g = an->ensure_grad().data();
    for (size_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i];
  }));
}

template <typename T>
Value<T> neg(const Value<T>& a) { return mul_scalar(a, T(-1)); }

// ---- nonlinearities ----

template <typename T>
Value<T> relu(const Value<T>& a) {
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] > T(0) ? a.val()[i] : T(0);
  auto an = a.node();
  return Value<T>(detail::make_node<T>(std::move(out), {an}, [an](Node<T>& n) {
    T* g = an->ensure_grad().data();
    for (size_t i = 0; i < n.grad.numel(); ++i)
      if (an->val[i] > T(0)) g[i] += n.grad[i];
  }));
}

template <typename T>
Value<T> sigmoid(const Value<T>& a) {
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < out.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-a.val()[i]));
  auto an = a.node();
  return Value<T>(detail::make_node<T>(std::move(out), {an}, [an](Node<T>& n) {
    T* g = an->ensure_grad().data();
    for (size_t i = 0; i < n.grad.numel(); ++i) {
      const T y = n.val[i];
      g[i] += n.grad[i] * y * (T(1) - y);
    }
  }));
}

template <typename T>
Value<T> exp_(const Value<T>& a) {
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < out.numel(); ++i) out[i] = std::exp(a.val()[i]);
  auto an = a.node();
  return Value<T>(detail::make_node<T>(std::move(out), {an}, [an](Node<T>& n) {
    T* g = an->ensure_grad().data();
    for (size_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i] * n.val[i];
  }));
}

template <typename T>
Value<T> log_(const Value<T>& a) {
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < out.numel(); ++i) out[i] = std::log(a.val()[i]);
  auto an = a.node();
  return Value<T>(detail::make_node<T>(std::move(out), {an}, [an](Node<T>& n) {
    T* g = an->ensure_grad().data();
    for (size_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i] / an->val[i];
  }));
}

template <typename T>
Value<T> sqrt_(const Value<T>& a) {
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < out.numel(); ++i) out[i] = std::sqrt(a.val()[i]);
  auto an = a.node();
  return Value<T>(detail::make_node<T>(std::move(out), {an}, [an](Node<T>& n) {
    T* g = an->ensure_grad().data();
    for (size_t i = 0; i < n.grad.numel(); ++i) {
      // subgradient 0 at the origin, instead of the poleward limit
      const T y = n.val[i];
      if (y > T(0)) g[i] += n.grad[i] / (T(2) * y);
    }
  }));
}

template <typename T>
Value<T> abs_(const Value<T>& a) {
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < out.numel(); ++i) out[i] = std::abs(a.val()[i]);
  auto an = a.node();
  return Value<T>(detail::make_node<T>(std::move(out), {an}, [an](Node<T>& n) {
    T* g = an->ensure_grad().data();
    for (size_t i = 0; i < n.grad.numel(); ++i) {
      const T x = an->val[i];
      if (x > T(0)) g[i] += n.grad[i];
      else if (x < T(0)) g[i] -= n.grad[i];
    }
  }));
}

/// Elementwise sqrt(a^2 + b^2) with a bounded subgradient at zero length.
template <typename T>
Value<T> hypot2(const Value<T>& a, const Value<T>& b) {
  require_config(a.val().same_shape(b.val()), "hypot2: shape mismatch");
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < out.numel(); ++i)
    out[i] = std::sqrt(a.val()[i] * a.val()[i] + b.val()[i] * b.val()[i]);
  auto an = a.node(); auto bn = b.node();
  return Value<T>(detail::make_node<T>(std::move(out), {an, bn}, [an, bn](Node<T>& n) {
    for (size_t i = 0; i < n.grad.numel(); ++i) {
      const T r = n.val[i];
      if (r <= T(0)) continue;
      if (an->requires_grad) an->ensure_grad()[i] += n.grad[i] * an->val[i] / r;
      if (bn->requires_grad) bn->ensure_grad()[i] += n.grad[i] * bn->val[i] / r;
    }
  }));
}

template <typename T>
Value<T> clamp_min(const Value<T>& a, T lo) {
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < out.numel(); ++i) out[i] = std::max(a.val()[i], lo);
  auto an = a.node();
  return Value<T>(detail::make_node<T>(std::move(out), {an, }, [an, lo](Node<T>& n) {
    T* g = an->ensure_grad().data();
    for (size_t i = 0; i < n.grad.numel(); ++i)
      if (an->val[i] > lo) g[i] += n.grad[i];
  }));
}

template <typename T>
Value<T> clamp(const Value<T>& a, T lo, T hi) {
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < out.numel(); ++i) out[i] = std::clamp(a.val()[i], lo, hi);
  auto an = a.node();
  return Value<T>(detail::make_node<T>(std::move(out), {an}, [an, lo, hi](Node<T>& n) {
    T* g = an->ensure_grad().data();
    for (size_t i = 0; i < n.grad.numel(); ++i)
      if (an->val[i] > lo && an->val[i] < hi) g[i] += n.grad[i];
  }));
}

/// Elementwise max; ties route the gradient to the first argument.
template <typename T>
Value<T> maximum(const Value<T>& a, const Value<T>& b) {
  require_config(a.val().same_shape(b.val()), "maximum: shape mismatch");
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < out.numel(); ++i) out[i] = std::max(a.val()[i], b.val()[i]);
  auto an = a.node(); auto bn = b.node();
  return Value<T>(detail::make_node<T>(std::move(out), {an, bn}, [an, bn](Node<T>& n) {
    for (size_t i = 0; i < n.grad.numel(); ++i) {
      if (an->val[i] >= bn->val[i]) {
        if (an->requires_grad) an->ensure_grad()[i] += n.grad[i];
      } else if (bn->requires_grad) {
        bn->ensure_grad()[i] += n.grad[i];
      }
    }
  }));
}

// ---- reductions ----

template <typename T>
Value<T> sum(const Value<T>& a) {
  T s = 0;
  for (size_t i = 0; i < a.val().numel(); ++i) s += a.val()[i];
  auto an = a.node();
  return Value<T>(detail::make_node<T>(Tensor<T>::scalar(s), {an}, [an](Node<T>& n) {
    T* g = an->ensure_grad().data();
    const T gy = n.grad[0];
    for (size_t i = 0; i < an->val.numel(); ++i) g[i] += gy;
  }));
}

template <typename T>
Value<T> mean(const Value<T>& a) {
  require_config(a.val().numel() > 0, "mean of empty tensor");
  return mul_scalar(sum(a), T(1) / T(a.val().numel()));
}

template <typename T>
Value<T> dot(const Value<T>& a, const Value<T>& b) { return sum(mul(a, b)); }

// ---- shape ops ----

template <typename T>
Value<T> reshape(const Value<T>& a, std::vector<int> shape) {
  Tensor<T> out = a.val().reshaped(shape);
  auto an = a.node();
  return Value<T>(detail::make_node<T>(std::move(out), {an}, [an](Node<T>& n) {
    T* g = an->ensure_grad().data();
    for (size_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i];
  }));
}

/// Slice along one axis: out = a[..., start:start+len, ...].
template <typename T>
Value<T> slice(const Value<T>& a, int axis, int start, int len) {
  const auto& sh = a.shape();
  require_config(axis >= 0 && axis < int(sh.size()), "slice: bad axis");
  require_config(start >= 0 && len >= 0 && start + len <= sh[size_t(axis)],
                 "slice: range out of bounds");
  std::vector<int> osh = sh;
  osh[size_t(axis)] = len;
  size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= size_t(sh[size_t(i)]);
  for (size_t i = size_t(axis) + 1; i < sh.size(); ++i) inner *= size_t(sh[i]);
  const size_t in_ax = size_t(sh[size_t(axis)]);

  Tensor<T> out(osh);
  for (size_t o = 0; o < outer; ++o)
    std::copy(a.val().data() + (o * in_ax + size_t(start)) * inner,
              a.val().data() + (o * in_ax + size_t(start) + size_t(len)) * inner,
              out.data() + o * size_t(len) * inner);
  auto an = a.node();
  return Value<T>(detail::make_node<T>(std::move(out), {an},
    [an, outer, inner, in_ax, start, len](Node<T>& n) {
      T* g = an->ensure_grad().data();
      const T* gy = n.grad.data();
      for (size_t o = 0; o < outer; ++o) {
        T* dst = g + (o * in_ax + size_t(start)) * inner;
        const T* src = gy + o * size_t(len) * inner;
        for (size_t i = 0; i < size_t(len) * inner; ++i) dst[i] += src[i];
      }
    }));
}

template <typename T>
Value<T> concat(const std::vector<Value<T>>& parts, int axis) {
  require_config(!parts.empty(), "concat: no inputs");
  const auto& sh0 = parts[0].shape();
  require_config(axis >= 0 && axis < int(sh0.size()), "concat: bad axis");
  std::vector<int> osh = sh0;
  int ax_total = 0;
  for (const auto& p : parts) {
    const auto& sh = p.shape();
    require_config(int(sh.size()) == int(sh0.size()), "concat: rank mismatch");
    for (size_t i = 0; i < sh.size(); ++i)
      require_config(int(i) == axis || sh[i] == sh0[i], "concat: shape mismatch");
    ax_total += sh[size_t(axis)];
  }
  osh[size_t(axis)] = ax_total;

  size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= size_t(sh0[size_t(i)]);
  for (size_t i = size_t(axis) + 1; i < sh0.size(); ++i) inner *= size_t(sh0[i]);

  Tensor<T> out(osh);
  std::vector<std::shared_ptr<Node<T>>> nodes;
  std::vector<int> ax_sizes;
  size_t off = 0;
  for (const auto& p : parts) {
    const size_t ax = size_t(p.shape()[size_t(axis)]);
    for (size_t o = 0; o < outer; ++o)
      std::copy(p.val().data() + o * ax * inner, p.val().data() + (o + 1) * ax * inner,
                out.data() + (o * size_t(ax_total) + off) * inner);
    nodes.push_back(p.node());
    ax_sizes.push_back(int(ax));
    off += ax;
  }
  return Value<T>(detail::make_node<T>(std::move(out), nodes,
    [nodes, ax_sizes, outer, inner, ax_total](Node<T>& n) {
      const T* gy = n.grad.data();
      size_t off2 = 0;
      for (size_t k = 0; k < nodes.size(); ++k) {
        const size_t ax = size_t(ax_sizes[k]);
        if (nodes[k]->requires_grad) {
          T* g = nodes[k]->ensure_grad().data();
          for (size_t o = 0; o < outer; ++o) {
            const T* src = gy + (o * size_t(ax_total) + off2) * inner;
            T* dst = g + o * ax * inner;
            for (size_t i = 0; i < ax * inner; ++i) dst[i] += src[i];
          }
        }
        off2 += ax;
      }
    }));
}

// ---- linear algebra ----

/// 2-D matrix product with optional transposes, Eigen-backed.
template <typename T>
Value<T> matmul(const Value<T>& a, const Value<T>& b, bool trans_a = false,
                bool trans_b = false) {
  require_config(a.val().rank() == 2 && b.val().rank() == 2, "matmul: rank must be 2");
  const int am = a.val().dim(0), an_ = a.val().dim(1);
  const int bm = b.val().dim(0), bn_ = b.val().dim(1);
  const int m = trans_a ? an_ : am;
  const int k = trans_a ? am : an_;
  const int k2 = trans_b ? bn_ : bm;
  const int n = trans_b ? bm : bn_;
  require_config(k == k2, "matmul: inner dimension mismatch");

  Tensor<T> out({m, n});
  {
    detail::ECMap<T> A(a.val().data(), am, an_);
    detail::ECMap<T> B(b.val().data(), bm, bn_);
    detail::EMap<T> C(out.data(), m, n);
    if (!trans_a && !trans_b) C.noalias() = A * B;
    else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
    else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }
  auto anode = a.node(); auto bnode = b.node();
  return Value<T>(detail::make_node<T>(std::move(out), {anode, bnode},
    [anode, bnode, am, an_, bm, bn_, m, n, trans_a, trans_b](Node<T>& nd) {
      detail::ECMap<T> G(nd.grad.data(), m, n);
      detail::ECMap<T> A(anode->val.data(), am, an_);
      detail::ECMap<T> B(bnode->val.data(), bm, bn_);
      if (anode->requires_grad) {
        detail::EMap<T> GA(anode->ensure_grad().data(), am, an_);
        if (!trans_a && !trans_b) GA.noalias() += G * B.transpose();
        else if (!trans_a && trans_b) GA.noalias() += G * B;
        else if (trans_a && !trans_b) GA.noalias() += B * G.transpose();
        else GA.noalias() += B.transpose() * G.transpose();
      }
      if (bnode->requires_grad) {
        detail::EMap<T> GB(bnode->ensure_grad().data(), bm, bn_);
        if (!trans_a && !trans_b) GB.noalias() += A.transpose() * G;
        else if (trans_a && !trans_b) GB.noalias() += A * G;
        else if (!trans_a && trans_b) GB.noalias() += G.transpose() * A;
        else GB.noalias() += G.transpose() * A.transpose();
      }
    }));
}

/// x [rows, n] + b [n], broadcast over rows.
template <typename T>
Value<T> bias_add(const Value<T>& x, const Value<T>& b) {
  require_config(x.val().rank() == 2 && b.val().rank() == 1 &&
                     x.val().dim(1) == b.val().dim(0),
                 "bias_add: shapes incompatible");
  const int rows = x.val().dim(0), n = x.val().dim(1);
  Tensor<T> out({rows, n});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < n; ++c) out.at(r, c) = x.val().at(r, c) + b.val()[size_t(c)];
  auto xn = x.node(); auto bn = b.node();
  return Value<T>(detail::make_node<T>(std::move(out), {xn, bn}, [xn, bn, rows, n](Node<T>& nd) {
    if (xn->requires_grad) {
      T* g = xn->ensure_grad().data();
      for (size_t i = 0; i < nd.grad.numel(); ++i) g[i] += nd.grad[i];
    }
    if (bn->requires_grad) {
      T* g = bn->ensure_grad().data();
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < n; ++c) g[c] += nd.grad[size_t(r) * n + c];
    }
  }));
}

/// Row-stable softmax over the last axis of a 2-D tensor.
template <typename T>
Value<T> softmax_rows(const Value<T>& a) {
  require_config(a.val().rank() == 2, "softmax_rows: rank must be 2");
  const int rows = a.val().dim(0), cols = a.val().dim(1);
  Tensor<T> out({rows, cols});
  for (int r = 0; r < rows; ++r) {
    T mx = a.val().at(r, 0);
    for (int c = 1; c < cols; ++c) mx = std::max(mx, a.val().at(r, c));
    T denom = 0;
    for (int c = 0; c < cols; ++c) {
      const T e = std::exp(a.val().at(r, c) - mx);
      out.at(r, c) = e;
      denom += e;
    }
    for (int c = 0; c < cols; ++c) out.at(r, c) /= denom;
  }
  auto an = a.node();
  return Value<T>(detail::make_node<T>(std::move(out), {an}, [an, rows, cols](Node<T>& nd) {
    T* g = an->ensure_grad().data();
    for (int r = 0; r < rows; ++r) {
      T dotp = 0;
      for (int c = 0; c < cols; ++c) dotp += nd.grad[size_t(r) * cols + c] * nd.val[size_t(r) * cols + c];
      for (int c = 0; c < cols; ++c) {
        const size_t i = size_t(r) * cols + c;
        g[i] += nd.val[i] * (nd.grad[i] - dotp);
      }
    }
  }));
}

/// Per-row layer norm with affine parameters gamma, beta of width cols.
template <typename T>
Value<T> layer_norm(const Value<T>& x, const Value<T>& gamma, const Value<T>& beta,
                    T eps = T(1e-5)) {
  require_config(x.val().rank() == 2, "layer_norm: rank must be 2");
  const int rows = x.val().dim(0), cols = x.val().dim(1);
  require_config(gamma.val().numel() == size_t(cols) && beta.val().numel() == size_t(cols),
                 "layer_norm: parameter width mismatch");
  Tensor<T> out({rows, cols});
  Tensor<T> xhat({rows, cols});
  Tensor<T> inv_std({rows});
  for (int r = 0; r < rows; ++r) {
    T mu = 0;
    for (int c = 0; c < cols; ++c) mu += x.val().at(r, c);
    mu /= T(cols);
    T var = 0;
    for (int c = 0; c < cols; ++c) {
      const T d = x.val().at(r, c) - mu;
      var += d * d;
    }
    var /= T(cols);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[size_t(r)] = is;
    for (int c = 0; c < cols; ++c) {
      const T h = (x.val().at(r, c) - mu) * is;
      xhat.at(r, c) = h;
      out.at(r, c) = h * gamma.val()[size_t(c)] + beta.val()[size_t(c)];
    }
  }
  auto xn = x.node(); auto gn = gamma.node(); auto bn = beta.node();
  auto xh = std::make_shared<Tensor<T>>(std::move(xhat));
  auto istd = std::make_shared<Tensor<T>>(std::move(inv_std));
  return Value<T>(detail::make_node<T>(std::move(out), {xn, gn, bn},
    [xn, gn, bn, xh, istd, rows, cols](Node<T>& nd) {
      for (int r = 0; r < rows; ++r) {
        const T is = (*istd)[size_t(r)];
        T sum_g = 0, sum_gh = 0;
        for (int c = 0; c < cols; ++c) {
          const size_t i = size_t(r) * cols + c;
          const T gy = nd.grad[i] * gn->val[size_t(c)];
          sum_g += gy;
          sum_gh += gy * (*xh)[i];
        }
        if (xn->requires_grad) {
          T* g = xn->ensure_grad().data();
          for (int c = 0; c < cols; ++c) {
            const size_t i = size_t(r) * cols + c;
            const T gy = nd.grad[i] * gn->val[size_t(c)];
            g[i] += is * (gy - sum_g / T(cols) - (*xh)[i] * sum_gh / T(cols));
          }
        }
        if (gn->requires_grad) {
          T* g = gn->ensure_grad().data();
          for (int c = 0; c < cols; ++c) {
            const size_t i = size_t(r) * cols + c;
            g[c] += nd.grad[i] * (*xh)[i];
          }
        }
        if (bn->requires_grad) {
          T* g = bn->ensure_grad().data();
          for (int c = 0; c < cols; ++c) g[c] += nd.grad[size_t(r) * cols + c];
        }
      }
    }));
}

}  // namespace flowface::ad
