#pragma once

#include "cvgan/common.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

namespace cvgan::ad {

// Reverse-mode autodiff over dense matrices. Each op builds a node whose
// backprop closure accumulates into its parents' grads; backward() runs a
// topological sweep from a scalar root. Graphs are rebuilt per step;
// parameter leaves persist and keep accumulating until zero_grad().

struct Node {
  Matrix val;
  Matrix grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;
  bool needs_grad = false;

  void ensure_grad() {
    if (grad.rows() != val.rows() || grad.cols() != val.cols()) {
      grad = Matrix::Zero(val.rows(), val.cols());
    }
  }
};

using NodePtr = std::shared_ptr<Node>;

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : node_(std::move(n)) {}

  static Var leaf(Matrix v, bool needs_grad = false) {
    auto n = std::make_shared<Node>();
    n->val = std::move(v);
    n->needs_grad = needs_grad;
    return Var(n);
  }

  bool valid() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->val; }
  Matrix& mutable_value() { return node_->val; }
  const Matrix& grad() const { return node_->grad; }
  bool needs_grad() const { return node_->needs_grad; }
  long rows() const { return node_->val.rows(); }
  long cols() const { return node_->val.cols(); }
  const NodePtr& node() const { return node_; }

  void zero_grad() {
    node_->ensure_grad();
    node_->grad.setZero();
  }

 private:
  NodePtr node_;
};

namespace detail {

inline Var make_op(Matrix val, std::vector<NodePtr> parents, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  n->parents = std::move(parents);
  for (const auto& p : n->parents) {
    if (p->needs_grad) {
      n->needs_grad = true;
      break;
    }
  }
  if (n->needs_grad) n->backprop = std::move(backprop);
  return Var(n);
}

inline void accum(const NodePtr& p, const Matrix& g) {
  if (!p->needs_grad) return;
  p->ensure_grad();
  p->grad += g;
}

}  // namespace detail

inline void backward(const Var& root) {
  require(root.valid() && root.rows() == 1 && root.cols() == 1, ErrorKind::Contract,
          "backward() requires a scalar root");
  // Iterative post-order DFS for the topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (p->needs_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad();
  root.node()->grad(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->needs_grad && n->backprop) n->backprop(*n);
  }
}

// ---- elementwise and scalar ops ----

inline Var add(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::Contract, "add: shape mismatch");
  auto pa = a.node(), pb = b.node();
  return detail::make_op(a.value() + b.value(), {pa, pb}, [pa, pb](Node& n) {
    detail::accum(pa, n.grad);
    detail::accum(pb, n.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::Contract, "sub: shape mismatch");
  auto pa = a.node(), pb = b.node();
  return detail::make_op(a.value() - b.value(), {pa, pb}, [pa, pb](Node& n) {
    detail::accum(pa, n.grad);
    detail::accum(pb, -n.grad);
  });
}

inline Var mul(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::Contract, "mul: shape mismatch");
  auto pa = a.node(), pb = b.node();
  return detail::make_op(a.value().cwiseProduct(b.value()), {pa, pb}, [pa, pb](Node& n) {
    detail::accum(pa, n.grad.cwiseProduct(pb->val));
    detail::accum(pb, n.grad.cwiseProduct(pa->val));
  });
}

inline Var scale(const Var& a, double s) {
  auto pa = a.node();
  return detail::make_op(a.value() * s, {pa}, [pa, s](Node& n) { detail::accum(pa, n.grad * s); });
}

inline Var add_scalar(const Var& a, double s) {
  auto pa = a.node();
  return detail::make_op(a.value().array() + s, {pa}, [pa](Node& n) { detail::accum(pa, n.grad); });
}

inline Var square(const Var& a) { return mul(a, a); }

inline Var exp(const Var& a) {
  auto pa = a.node();
  Matrix v = a.value().array().exp();
  return detail::make_op(v, {pa}, [pa](Node& n) { detail::accum(pa, n.grad.cwiseProduct(n.val)); });
}

inline Var log(const Var& a) {
  auto pa = a.node();
  return detail::make_op(a.value().array().log(), {pa},
                         [pa](Node& n) { detail::accum(pa, n.grad.cwiseQuotient(pa->val)); });
}

inline Var tanh(const Var& a) {
  auto pa = a.node();
  Matrix v = a.value().array().tanh();
  return detail::make_op(v, {pa}, [pa](Node& n) {
    detail::accum(pa, n.grad.cwiseProduct(Matrix(1.0 - n.val.array().square())));
  });
}

inline Var sigmoid(const Var& a) {
  auto pa = a.node();
  Matrix v = (1.0 / (1.0 + (-a.value().array()).exp()));
  return detail::make_op(v, {pa}, [pa](Node& n) {
    detail::accum(pa, n.grad.cwiseProduct(Matrix(n.val.array() * (1.0 - n.val.array()))));
  });
}

inline Var leaky_relu(const Var& a, double slope) {
  auto pa = a.node();
  Matrix v = a.value().unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  return detail::make_op(v, {pa}, [pa, slope](Node& n) {
    Matrix g = n.grad;
    for (long j = 0; j < g.cols(); ++j)
      for (long i = 0; i < g.rows(); ++i)
        if (pa->val(i, j) <= 0.0) g(i, j) *= slope;
    detail::accum(pa, g);
  });
}

/// softplus(x) = log(1+e^x), evaluated in the overflow-safe form.
inline Var softplus(const Var& a) {
  auto pa = a.node();
  Matrix v = a.value().unaryExpr([](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
  return detail::make_op(v, {pa}, [pa](Node& n) {
    Matrix s = pa->val.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    detail::accum(pa, n.grad.cwiseProduct(s));
  });
}

inline Var stop_grad(const Var& a) { return Var::leaf(a.value(), false); }

// ---- linear algebra ----

inline Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), ErrorKind::Contract, "matmul: inner dimension mismatch");
  auto pa = a.node(), pb = b.node();
  return detail::make_op(a.value() * b.value(), {pa, pb}, [pa, pb](Node& n) {
    if (pa->needs_grad) detail::accum(pa, n.grad * pb->val.transpose());
    if (pb->needs_grad) detail::accum(pb, pa->val.transpose() * n.grad);
  });
}

/// X (r,c) + column vector b (r,1) broadcast across columns.
inline Var add_colvec(const Var& x, const Var& b) {
  require(b.cols() == 1 && b.rows() == x.rows(), ErrorKind::Contract, "add_colvec: shape mismatch");
  auto px = x.node(), pb = b.node();
  return detail::make_op(x.value().colwise() + Eigen::VectorXd(b.value().col(0)), {px, pb}, [px, pb](Node& n) {
    detail::accum(px, n.grad);
    if (pb->needs_grad) detail::accum(pb, n.grad.rowwise().sum());
  });
}

// ---- reductions ----

inline Var sum(const Var& a) {
  auto pa = a.node();
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return detail::make_op(v, {pa}, [pa](Node& n) {
    detail::accum(pa, Matrix::Constant(pa->val.rows(), pa->val.cols(), n.grad(0, 0)));
  });
}

inline Var mean(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a.value().size());
  return scale(sum(a), inv);
}

inline Var colsum(const Var& a) {
  auto pa = a.node();
  return detail::make_op(a.value().colwise().sum(), {pa}, [pa](Node& n) {
    detail::accum(pa, n.grad.replicate(pa->val.rows(), 1));
  });
}

inline Var rowmean(const Var& a) {
  auto pa = a.node();
  const double inv = 1.0 / static_cast<double>(a.cols());
  return detail::make_op(a.value().rowwise().mean(), {pa}, [pa, inv](Node& n) {
    detail::accum(pa, n.grad.replicate(1, pa->val.cols()) * inv);
  });
}

/// Mean of the columns selected by `mask` (true = included).
inline Var masked_colmean(const Var& a, const std::vector<char>& mask) {
  require(static_cast<long>(mask.size()) == a.cols(), ErrorKind::Contract, "masked_colmean: mask size");
  long count = 0;
  for (char m : mask)
    if (m) ++count;
  require(count > 0, ErrorKind::Contract, "masked_colmean: empty mask");
  auto pa = a.node();
  Matrix v = Matrix::Zero(a.rows(), 1);
  for (long j = 0; j < a.cols(); ++j)
    if (mask[static_cast<std::size_t>(j)]) v += a.value().col(j);
  v /= static_cast<double>(count);
  const double inv = 1.0 / static_cast<double>(count);
  return detail::make_op(v, {pa}, [pa, mask, inv](Node& n) {
    if (!pa->needs_grad) return;
    pa->ensure_grad();
    for (long j = 0; j < pa->val.cols(); ++j)
      if (mask[static_cast<std::size_t>(j)]) pa->grad.col(j) += n.grad.col(0) * inv;
  });
}

// ---- structural ops ----

inline Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorKind::Contract, "concat_rows: empty");
  long rows = 0;
  const long cols = parts[0].cols();
  for (const auto& p : parts) {
    require(p.cols() == cols, ErrorKind::Contract, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix v(rows, cols);
  std::vector<NodePtr> parents;
  std::vector<long> offsets;
  long off = 0;
  for (const auto& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    parents.push_back(p.node());
    offsets.push_back(off);
    off += p.rows();
  }
  return detail::make_op(std::move(v), parents, [parents, offsets](Node& n) {
    for (std::size_t i = 0; i < parents.size(); ++i) {
      detail::accum(parents[i], n.grad.middleRows(offsets[i], parents[i]->val.rows()));
    }
  });
}

inline Var slice_rows(const Var& a, long from, long count) {
  require(from >= 0 && from + count <= a.rows(), ErrorKind::Contract, "slice_rows: out of range");
  auto pa = a.node();
  return detail::make_op(a.value().middleRows(from, count), {pa}, [pa, from, count](Node& n) {
    if (!pa->needs_grad) return;
    pa->ensure_grad();
    pa->grad.middleRows(from, count) += n.grad;
  });
}

/// Reinterpret a feature map (C, B*L) as per-sample columns (C*L, B).
/// Row index in the output is c*L + l.
inline Var map_to_columns(const Var& a, int batch, int len) {
  const long ch = a.rows();
  require(a.cols() == static_cast<long>(batch) * len, ErrorKind::Contract, "map_to_columns: shape");
  Matrix v(ch * len, batch);
  for (int b = 0; b < batch; ++b)
    for (long c = 0; c < ch; ++c)
      for (int l = 0; l < len; ++l) v(c * len + l, b) = a.value()(c, static_cast<long>(b) * len + l);
  auto pa = a.node();
  return detail::make_op(std::move(v), {pa}, [pa, batch, len, ch](Node& n) {
    if (!pa->needs_grad) return;
    pa->ensure_grad();
    for (int b = 0; b < batch; ++b)
      for (long c = 0; c < ch; ++c)
        for (int l = 0; l < len; ++l)
          pa->grad(c, static_cast<long>(b) * len + l) += n.grad(c * len + l, b);
  });
}

/// Inverse of map_to_columns: (C*L, B) -> (C, B*L).
inline Var columns_to_map(const Var& a, int channels, int len) {
  require(a.rows() == static_cast<long>(channels) * len, ErrorKind::Contract, "columns_to_map: shape");
  const long batch = a.cols();
  Matrix v(channels, batch * len);
  for (long b = 0; b < batch; ++b)
    for (int c = 0; c < channels; ++c)
      for (int l = 0; l < len; ++l) v(c, b * len + l) = a.value()(static_cast<long>(c) * len + l, b);
  auto pa = a.node();
  return detail::make_op(std::move(v), {pa}, [pa, channels, len, batch](Node& n) {
    if (!pa->needs_grad) return;
    pa->ensure_grad();
    for (long b = 0; b < batch; ++b)
      for (int c = 0; c < channels; ++c)
        for (int l = 0; l < len; ++l)
          pa->grad(static_cast<long>(c) * len + l, b) += n.grad(c, b * len + l);
  });
}

// ---- losses ----

/// Mean cross-entropy of softmax(logits) against integer labels.
/// logits (K, B), labels size B.
inline Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels) {
  const long K = logits.rows(), B = logits.cols();
  require(static_cast<long>(labels.size()) == B, ErrorKind::Contract, "softmax_cross_entropy: label count");
  Matrix probs(K, B);
  double total = 0.0;
  for (long b = 0; b < B; ++b) {
    const double mx = logits.value().col(b).maxCoeff();
    Eigen::VectorXd e = (logits.value().col(b).array() - mx).exp();
    const double z = e.sum();
    probs.col(b) = e / z;
    const int y = labels[static_cast<std::size_t>(b)];
    require(y >= 0 && y < K, ErrorKind::Contract, "softmax_cross_entropy: label out of range");
    total += -(logits.value()(y, b) - mx - std::log(z));
  }
  Matrix v(1, 1);
  v(0, 0) = total / static_cast<double>(B);
  auto pl = logits.node();
  return detail::make_op(v, {pl}, [pl, probs, labels, B](Node& n) {
    if (!pl->needs_grad) return;
    Matrix g = probs;
    for (long b = 0; b < B; ++b) g(labels[static_cast<std::size_t>(b)], b) -= 1.0;
    detail::accum(pl, g * (n.grad(0, 0) / static_cast<double>(B)));
  });
}

}  // namespace cvgan::ad
