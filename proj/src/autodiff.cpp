#include "dvc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace dvc::ad {

namespace {

thread_local bool g_grad_enabled = true;

Var make_result(Matrix value, std::vector<Var> parents,
                std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled)
    for (const Var& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const Var& p : parents) node->parents.push_back(p.shared());
    node->backward = std::move(backward_fn);
  }
  return Var(std::move(node));
}

// Accumulates a gradient into a parent if it tracks one.
inline void accumulate(Node& parent, const Matrix& g) {
  if (parent.requires_grad) parent.grad_ref() += g;
}

enum class Broadcast { kSame, kScalar, kRow, kCol };

Broadcast broadcast_kind(const Matrix& big, const Matrix& small) {
  if (big.rows() == small.rows() && big.cols() == small.cols())
    return Broadcast::kSame;
  if (small.rows() == 1 && small.cols() == 1) return Broadcast::kScalar;
  if (small.rows() == 1 && small.cols() == big.cols()) return Broadcast::kRow;
  if (small.cols() == 1 && small.rows() == big.rows()) return Broadcast::kCol;
  throw std::invalid_argument("incompatible shapes for broadcast");
}

Matrix expand(const Matrix& small, Broadcast kind, Index rows, Index cols) {
  switch (kind) {
    case Broadcast::kSame:
      return small;
    case Broadcast::kScalar:
      return Matrix::Constant(rows, cols, small(0, 0));
    case Broadcast::kRow:
      return small.replicate(rows, 1);
    case Broadcast::kCol:
      return small.replicate(1, cols);
  }
  return small;
}

Matrix reduce(const Matrix& g, Broadcast kind) {
  switch (kind) {
    case Broadcast::kSame:
      return g;
    case Broadcast::kScalar:
      return Matrix::Constant(1, 1, g.sum());
    case Broadcast::kRow:
      return g.colwise().sum();
    case Broadcast::kCol:
      return g.rowwise().sum();
  }
  return g;
}

// Resolves broadcasting for a binary op; the larger operand sets the shape.
struct BinaryShapes {
  Index rows, cols;
  Broadcast a_kind, b_kind;
};

BinaryShapes binary_shapes(const Matrix& a, const Matrix& b) {
  if (a.size() >= b.size()) {
    return {a.rows(), a.cols(), Broadcast::kSame, broadcast_kind(a, b)};
  }
  return {b.rows(), b.cols(), broadcast_kind(b, a), Broadcast::kSame};
}

}  // namespace

Matrix Var::grad() const {
  if (node_->grad.size() == 0)
    return Matrix::Zero(node_->value.rows(), node_->value.cols());
  return node_->grad;
}

Scalar Var::item() const {
  if (node_->value.size() != 1)
    throw std::logic_error("item() on non-scalar Var");
  return node_->value(0, 0);
}

Var constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var constant(Scalar value) { return constant(Matrix::Constant(1, 1, value)); }

Var leaf(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& root, Scalar seed) {
  if (root.rows() != 1 || root.cols() != 1)
    throw std::logic_error("backward() requires a 1x1 root");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second)
        stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_ref()(0, 0) += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->grad.size() != 0) node->backward(*node);
  }
  // Interior gradients are not needed after propagation.
  for (Node* node : order)
    if (node->backward) node->grad.resize(0, 0);
}

// --- binary -----------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  const auto s = binary_shapes(a.value(), b.value());
  Matrix out = expand(a.value(), s.a_kind, s.rows, s.cols) +
               expand(b.value(), s.b_kind, s.rows, s.cols);
  return make_result(std::move(out), {a, b}, [s](Node& self) {
    accumulate(*self.parents[0], reduce(self.grad, s.a_kind));
    accumulate(*self.parents[1], reduce(self.grad, s.b_kind));
  });
}

Var sub(const Var& a, const Var& b) {
  const auto s = binary_shapes(a.value(), b.value());
  Matrix out = expand(a.value(), s.a_kind, s.rows, s.cols) -
               expand(b.value(), s.b_kind, s.rows, s.cols);
  return make_result(std::move(out), {a, b}, [s](Node& self) {
    accumulate(*self.parents[0], reduce(self.grad, s.a_kind));
    accumulate(*self.parents[1], reduce(-self.grad, s.b_kind));
  });
}

Var mul(const Var& a, const Var& b) {
  const auto s = binary_shapes(a.value(), b.value());
  Matrix out = expand(a.value(), s.a_kind, s.rows, s.cols).cwiseProduct(
      expand(b.value(), s.b_kind, s.rows, s.cols));
  return make_result(std::move(out), {a, b}, [s](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad)
      accumulate(pa, reduce(self.grad.cwiseProduct(expand(
                                pb.value, s.b_kind, s.rows, s.cols)),
                            s.a_kind));
    if (pb.requires_grad)
      accumulate(pb, reduce(self.grad.cwiseProduct(expand(
                                pa.value, s.a_kind, s.rows, s.cols)),
                            s.b_kind));
  });
}

Var div(const Var& a, const Var& b) {
  const auto s = binary_shapes(a.value(), b.value());
  Matrix eb = expand(b.value(), s.b_kind, s.rows, s.cols);
  Matrix out = expand(a.value(), s.a_kind, s.rows, s.cols).cwiseQuotient(eb);
  return make_result(out, {a, b}, [s, eb, out](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad)
      accumulate(pa, reduce(self.grad.cwiseQuotient(eb), s.a_kind));
    if (pb.requires_grad)
      accumulate(pb, reduce(-self.grad.cwiseProduct(out).cwiseQuotient(eb),
                            s.b_kind));
  });
}

Var operator+(const Var& a, const Var& b) { return add(a, b); }
Var operator-(const Var& a, const Var& b) { return sub(a, b); }
Var operator*(const Var& a, const Var& b) { return mul(a, b); }
Var operator/(const Var& a, const Var& b) { return div(a, b); }
Var operator-(const Var& a) { return scale(a, -1.0); }
Var operator*(Scalar s, const Var& a) { return scale(a, s); }
Var operator+(const Var& a, Scalar s) { return add(a, constant(s)); }
Var operator+(Scalar s, const Var& a) { return add(a, constant(s)); }
Var operator-(Scalar s, const Var& a) { return add(scale(a, -1.0), constant(s)); }

// --- unary --------------------------------------------------------------------

Var scale(const Var& a, Scalar s) {
  return make_result(a.value() * s, {a}, [s](Node& self) {
    accumulate(*self.parents[0], self.grad * s);
  });
}

Var exp(const Var& a) {
  Matrix out = a.value().array().exp().matrix();
  return make_result(out, {a}, [](Node& self) {
    accumulate(*self.parents[0], self.grad.cwiseProduct(self.value));
  });
}

Var log(const Var& a) {
  return make_result(a.value().array().log().matrix(), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    accumulate(p, self.grad.cwiseQuotient(p.value));
  });
}

Var sigmoid(const Var& a) {
  Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return make_result(out, {a}, [](Node& self) {
    const auto y = self.value.array();
    accumulate(*self.parents[0],
               (self.grad.array() * y * (1.0 - y)).matrix());
  });
}

Var tanh(const Var& a) {
  return make_result(a.value().array().tanh().matrix(), {a}, [](Node& self) {
    const auto y = self.value.array();
    accumulate(*self.parents[0], (self.grad.array() * (1.0 - y * y)).matrix());
  });
}

Var relu(const Var& a) {
  return make_result(a.value().cwiseMax(0.0), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    accumulate(p, (p.value.array() > 0.0)
                      .select(self.grad.array(), 0.0)
                      .matrix());
  });
}

Var square(const Var& a) {
  return make_result(a.value().array().square().matrix(), {a},
                     [](Node& self) {
                       Node& p = *self.parents[0];
                       accumulate(p, 2.0 * self.grad.cwiseProduct(p.value));
                     });
}

Var sqrt(const Var& a) {
  return make_result(a.value().array().sqrt().matrix(), {a}, [](Node& self) {
    accumulate(*self.parents[0],
               (0.5 * self.grad.array() / self.value.array()).matrix());
  });
}

Var pow(const Var& a, Scalar p) {
  return make_result(a.value().array().pow(p).matrix(), {a},
                     [p](Node& self) {
                       Node& x = *self.parents[0];
                       accumulate(x, (self.grad.array() * p *
                                      x.value.array().pow(p - 1.0))
                                         .matrix());
                     });
}

Var clamp(const Var& a, Scalar lo, Scalar hi) {
  Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
  return make_result(out, {a}, [lo, hi](Node& self) {
    Node& p = *self.parents[0];
    const auto v = p.value.array();
    accumulate(p, ((v >= lo) && (v <= hi))
                      .select(self.grad.array(), 0.0)
                      .matrix());
  });
}

Var clamp_min(const Var& a, Scalar lo) {
  return make_result(a.value().cwiseMax(lo), {a}, [lo](Node& self) {
    Node& p = *self.parents[0];
    accumulate(p, (p.value.array() >= lo)
                      .select(self.grad.array(), 0.0)
                      .matrix());
  });
}

Var detach(const Var& a) { return constant(a.value()); }

// --- linear algebra -------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul shape mismatch");
  return make_result(a.value() * b.value(), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) pa.grad_ref().noalias() += self.grad * pb.value.transpose();
    if (pb.requires_grad) pb.grad_ref().noalias() += pa.value.transpose() * self.grad;
  });
}

Var transpose(const Var& a) {
  return make_result(a.value().transpose(), {a}, [](Node& self) {
    accumulate(*self.parents[0], self.grad.transpose());
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat of nothing");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols rows");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make_result(std::move(out), parts, [](Node& self) {
    Index offset = 0;
    for (auto& parent : self.parents) {
      const Index c = parent->value.cols();
      if (parent->requires_grad)
        parent->grad_ref() += self.grad.middleCols(offset, c);
      offset += c;
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat of nothing");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows cols");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make_result(std::move(out), parts, [](Node& self) {
    Index offset = 0;
    for (auto& parent : self.parents) {
      const Index r = parent->value.rows();
      if (parent->requires_grad)
        parent->grad_ref() += self.grad.middleRows(offset, r);
      offset += r;
    }
  });
}

Var slice_cols(const Var& a, Index start, Index count) {
  if (start < 0 || start + count > a.cols())
    throw std::out_of_range("slice_cols");
  return make_result(a.value().middleCols(start, count), {a},
                     [start, count](Node& self) {
                       Node& p = *self.parents[0];
                       if (p.requires_grad)
                         p.grad_ref().middleCols(start, count) += self.grad;
                     });
}

Var slice_rows(const Var& a, Index start, Index count) {
  if (start < 0 || start + count > a.rows())
    throw std::out_of_range("slice_rows");
  return make_result(a.value().middleRows(start, count), {a},
                     [start, count](Node& self) {
                       Node& p = *self.parents[0];
                       if (p.requires_grad)
                         p.grad_ref().middleRows(start, count) += self.grad;
                     });
}

Var gather_rows(const Var& a, std::span<const int> rows) {
  std::vector<int> idx(rows.begin(), rows.end());
  Matrix out(static_cast<Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows()) throw std::out_of_range("gather_rows");
    out.row(static_cast<Index>(i)) = a.value().row(idx[i]);
  }
  return make_result(std::move(out), {a}, [idx](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Matrix& g = p.grad_ref();
    for (std::size_t i = 0; i < idx.size(); ++i)
      g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
  });
}

Var element(const Var& a, Index r, Index c) {
  return make_result(Matrix::Constant(1, 1, a.value()(r, c)), {a},
                     [r, c](Node& self) {
                       Node& p = *self.parents[0];
                       if (p.requires_grad) p.grad_ref()(r, c) += self.grad(0, 0);
                     });
}

Var pick_per_row(const Var& a, std::span<const int> cols) {
  if (static_cast<Index>(cols.size()) != a.rows())
    throw std::invalid_argument("pick_per_row size");
  std::vector<int> idx(cols.begin(), cols.end());
  Matrix out(a.rows(), 1);
  for (Index i = 0; i < a.rows(); ++i) out(i, 0) = a.value()(i, idx[i]);
  return make_result(std::move(out), {a}, [idx](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Matrix& g = p.grad_ref();
    for (std::size_t i = 0; i < idx.size(); ++i)
      g(static_cast<Index>(i), idx[i]) += self.grad(static_cast<Index>(i), 0);
  });
}

// --- reductions -------------------------------------------------------------------

Var sum(const Var& a) {
  return make_result(Matrix::Constant(1, 1, a.value().sum()), {a},
                     [](Node& self) {
                       Node& p = *self.parents[0];
                       if (p.requires_grad) p.grad_ref().array() += self.grad(0, 0);
                     });
}

Var mean(const Var& a) {
  const Scalar n = static_cast<Scalar>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var sum_rows(const Var& a) {
  return make_result(a.value().colwise().sum(), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (p.requires_grad) p.grad_ref().rowwise() += self.grad.row(0);
  });
}

Var sum_cols(const Var& a) {
  return make_result(a.value().rowwise().sum(), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (p.requires_grad) p.grad_ref().colwise() += self.grad.col(0);
  });
}

Var max_over_rows(const Var& a) {
  const Matrix& v = a.value();
  Matrix out(1, v.cols());
  std::vector<Index> arg(static_cast<std::size_t>(v.cols()));
  for (Index c = 0; c < v.cols(); ++c)
    out(0, c) = v.col(c).maxCoeff(&arg[static_cast<std::size_t>(c)]);
  return make_result(std::move(out), {a}, [arg](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Matrix& g = p.grad_ref();
    for (std::size_t c = 0; c < arg.size(); ++c)
      g(arg[c], static_cast<Index>(c)) += self.grad(0, static_cast<Index>(c));
  });
}

Var max_over_cols(const Var& a) {
  const Matrix& v = a.value();
  Matrix out(v.rows(), 1);
  std::vector<Index> arg(static_cast<std::size_t>(v.rows()));
  for (Index r = 0; r < v.rows(); ++r)
    out(r, 0) = v.row(r).maxCoeff(&arg[static_cast<std::size_t>(r)]);
  return make_result(std::move(out), {a}, [arg](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Matrix& g = p.grad_ref();
    for (std::size_t r = 0; r < arg.size(); ++r)
      g(static_cast<Index>(r), arg[r]) += self.grad(static_cast<Index>(r), 0);
  });
}

// --- fused ---------------------------------------------------------------------------

Var softmax_rows(const Var& a) {
  Matrix out = a.value();
  for (Index r = 0; r < out.rows(); ++r) {
    const Scalar m = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return make_result(std::move(out), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    const Matrix& y = self.value;
    Matrix gy = self.grad.cwiseProduct(y);
    const Matrix row_dot = gy.rowwise().sum();
    gy -= y.cwiseProduct(row_dot.replicate(1, y.cols()));
    p.grad_ref() += gy;
  });
}

Var log_softmax_rows(const Var& a) {
  Matrix out = a.value();
  for (Index r = 0; r < out.rows(); ++r) {
    const Scalar m = out.row(r).maxCoeff();
    const Scalar lse = m + std::log((out.row(r).array() - m).exp().sum());
    out.row(r).array() -= lse;
  }
  return make_result(std::move(out), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    const Matrix soft = self.value.array().exp().matrix();
    const Matrix gsum = self.grad.rowwise().sum();
    p.grad_ref() += self.grad - soft.cwiseProduct(gsum.replicate(1, soft.cols()));
  });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta,
                    Scalar eps) {
  const Matrix& v = x.value();
  const Index n = v.cols();
  Matrix xhat(v.rows(), n);
  Matrix inv_std(v.rows(), 1);
  for (Index r = 0; r < v.rows(); ++r) {
    const Scalar mu = v.row(r).mean();
    const Scalar var = (v.row(r).array() - mu).square().mean();
    inv_std(r, 0) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (v.row(r).array() - mu) * inv_std(r, 0);
  }
  Matrix out = xhat.cwiseProduct(gamma.value().replicate(v.rows(), 1));
  out.rowwise() += beta.value().row(0);
  return make_result(std::move(out), {x, gamma, beta},
                     [xhat, inv_std, n](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pg = *self.parents[1];
                       Node& pb = *self.parents[2];
                       const Matrix& g = self.grad;
                       if (pg.requires_grad)
                         pg.grad_ref() += g.cwiseProduct(xhat).colwise().sum();
                       if (pb.requires_grad) pb.grad_ref() += g.colwise().sum();
                       if (!px.requires_grad) return;
                       const Matrix gx =
                           g.cwiseProduct(pg.value.replicate(g.rows(), 1));
                       Matrix dx(g.rows(), n);
                       for (Index r = 0; r < g.rows(); ++r) {
                         const Scalar m1 = gx.row(r).mean();
                         const Scalar m2 = gx.row(r).dot(xhat.row(r)) /
                                           static_cast<Scalar>(n);
                         dx.row(r) = ((gx.row(r).array() - m1) -
                                      xhat.row(r).array() * m2) *
                                     inv_std(r, 0);
                       }
                       px.grad_ref() += dx;
                     });
}

Var normalize_rows(const Var& x, Scalar floor) {
  const Matrix& v = x.value();
  Matrix norms = v.rowwise().norm();
  Matrix out(v.rows(), v.cols());
  std::vector<bool> floored(static_cast<std::size_t>(v.rows()));
  for (Index r = 0; r < v.rows(); ++r) {
    floored[static_cast<std::size_t>(r)] = norms(r, 0) < floor;
    const Scalar d = std::max(norms(r, 0), floor);
    out.row(r) = v.row(r) / d;
    norms(r, 0) = d;
  }
  return make_result(out, {x}, [out, norms, floored](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Matrix dx(out.rows(), out.cols());
    for (Index r = 0; r < out.rows(); ++r) {
      if (floored[static_cast<std::size_t>(r)]) {
        dx.row(r) = self.grad.row(r) / norms(r, 0);
      } else {
        const Scalar proj = self.grad.row(r).dot(out.row(r));
        dx.row(r) = (self.grad.row(r) - proj * out.row(r)) / norms(r, 0);
      }
    }
    p.grad_ref() += dx;
  });
}

Var bce_with_logits(const Var& logits, const Matrix& targets) {
  const Matrix& x = logits.value();
  if (x.rows() != targets.rows() || x.cols() != targets.cols())
    throw std::invalid_argument("bce_with_logits shape mismatch");
  Matrix out = (x.array().max(0.0) - x.array() * targets.array() +
                (1.0 + (-x.array().abs()).exp()).log())
                   .matrix();
  return make_result(std::move(out), {logits}, [targets](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    const Matrix sig = (1.0 / (1.0 + (-p.value.array()).exp())).matrix();
    p.grad_ref() += self.grad.cwiseProduct(sig - targets);
  });
}

// --- interval geometry ------------------------------------------------------------

namespace {

// Partial derivatives of IoU for one pair of canonical segments.
struct IouParts {
  Scalar iou = 0.0;
  Scalar ds1 = 0.0, de1 = 0.0, ds2 = 0.0, de2 = 0.0;
};

IouParts iou_with_grad(Scalar s1, Scalar e1, Scalar s2, Scalar e2) {
  IouParts r;
  const Scalar inter_raw = std::min(e1, e2) - std::max(s1, s2);
  const Scalar inter = std::max(inter_raw, 0.0);
  const Scalar uni = (e1 - s1) + (e2 - s2) - inter;
  if (uni <= 0.0) return r;
  r.iou = inter / uni;
  // d iou / d len_k = -inter / uni^2 ; d iou / d inter = (uni + inter) / uni^2
  const Scalar d_len = -inter / (uni * uni);
  const Scalar d_inter = (uni + inter) / (uni * uni);
  r.de1 += d_len;
  r.ds1 -= d_len;
  r.de2 += d_len;
  r.ds2 -= d_len;
  if (inter_raw > 0.0) {
    if (e1 <= e2) r.de1 += d_inter; else r.de2 += d_inter;
    if (s1 >= s2) r.ds1 -= d_inter; else r.ds2 -= d_inter;
  }
  return r;
}

}  // namespace

Var pairwise_tiou(const Var& a_start, const Var& a_end, const Var& b_start,
                  const Var& b_end) {
  const Index na = a_start.rows();
  const Index nb = b_start.rows();
  Matrix out(na, nb);
  for (Index i = 0; i < na; ++i)
    for (Index j = 0; j < nb; ++j)
      out(i, j) = iou_with_grad(a_start(i, 0), a_end(i, 0), b_start(j, 0),
                                b_end(j, 0)).iou;
  return make_result(std::move(out), {a_start, a_end, b_start, b_end},
                     [na, nb](Node& self) {
                       Node& as = *self.parents[0];
                       Node& ae = *self.parents[1];
                       Node& bs = *self.parents[2];
                       Node& be = *self.parents[3];
                       Matrix gas = Matrix::Zero(na, 1), gae = Matrix::Zero(na, 1);
                       Matrix gbs = Matrix::Zero(nb, 1), gbe = Matrix::Zero(nb, 1);
                       for (Index i = 0; i < na; ++i) {
                         for (Index j = 0; j < nb; ++j) {
                           const Scalar g = self.grad(i, j);
                           if (g == 0.0) continue;
                           const IouParts p = iou_with_grad(
                               as.value(i, 0), ae.value(i, 0), bs.value(j, 0),
                               be.value(j, 0));
                           gas(i, 0) += g * p.ds1;
                           gae(i, 0) += g * p.de1;
                           gbs(j, 0) += g * p.ds2;
                           gbe(j, 0) += g * p.de2;
                         }
                       }
                       accumulate(as, gas);
                       accumulate(ae, gae);
                       accumulate(bs, gbs);
                       accumulate(be, gbe);
                     });
}

Var paired_giou(const Var& a_start, const Var& a_end, const Var& b_start,
                const Var& b_end) {
  const Index n = a_start.rows();
  if (b_start.rows() != n) throw std::invalid_argument("paired_giou sizes");
  struct Parts {
    Scalar value, ds1, de1, ds2, de2;
  };
  auto compute = [](Scalar s1, Scalar e1, Scalar s2, Scalar e2) {
    Parts out{0, 0, 0, 0, 0};
    const Scalar hull = std::max(e1, e2) - std::min(s1, s2);
    if (hull <= 0.0) return out;
    const IouParts iou = iou_with_grad(s1, e1, s2, e2);
    const Scalar inter = std::max(std::min(e1, e2) - std::max(s1, s2), 0.0);
    const Scalar uni = (e1 - s1) + (e2 - s2) - inter;
    // giou = iou - (hull - uni) / hull = iou - 1 + uni / hull
    out.value = iou.iou - 1.0 + uni / hull;
    out.ds1 = iou.ds1;
    out.de1 = iou.de1;
    out.ds2 = iou.ds2;
    out.de2 = iou.de2;
    const Scalar d_uni = 1.0 / hull;
    const Scalar d_hull = -uni / (hull * hull);
    // uni = len1 + len2 - inter
    out.de1 += d_uni;
    out.ds1 -= d_uni;
    out.de2 += d_uni;
    out.ds2 -= d_uni;
    if (std::min(e1, e2) - std::max(s1, s2) > 0.0) {
      if (e1 <= e2) out.de1 -= d_uni; else out.de2 -= d_uni;
      if (s1 >= s2) out.ds1 += d_uni; else out.ds2 += d_uni;
    }
    if (e1 >= e2) out.de1 += d_hull; else out.de2 += d_hull;
    if (s1 <= s2) out.ds1 -= d_hull; else out.ds2 -= d_hull;
    return out;
  };
  Matrix out(n, 1);
  for (Index i = 0; i < n; ++i)
    out(i, 0) = compute(a_start(i, 0), a_end(i, 0), b_start(i, 0),
                        b_end(i, 0)).value;
  return make_result(std::move(out), {a_start, a_end, b_start, b_end},
                     [n, compute](Node& self) {
                       Node& as = *self.parents[0];
                       Node& ae = *self.parents[1];
                       Node& bs = *self.parents[2];
                       Node& be = *self.parents[3];
                       Matrix gas(n, 1), gae(n, 1), gbs(n, 1), gbe(n, 1);
                       for (Index i = 0; i < n; ++i) {
                         const Parts p = compute(as.value(i, 0), ae.value(i, 0),
                                                 bs.value(i, 0), be.value(i, 0));
                         const Scalar g = self.grad(i, 0);
                         gas(i, 0) = g * p.ds1;
                         gae(i, 0) = g * p.de1;
                         gbs(i, 0) = g * p.ds2;
                         gbe(i, 0) = g * p.de2;
                       }
                       accumulate(as, gas);
                       accumulate(ae, gae);
                       accumulate(bs, gbs);
                       accumulate(be, gbe);
                     });
}

// --- parameters ---------------------------------------------------------------------

Var ParameterSet::add(const std::string& name, Matrix init) {
  if (find(name) != nullptr)
    throw std::invalid_argument("duplicate parameter name: " + name);
  Var v = leaf(std::move(init));
  items_.emplace_back(name, v);
  return v;
}

const Var* ParameterSet::find(const std::string& name) const {
  for (const auto& [n, v] : items_)
    if (n == name) return &v;
  return nullptr;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t total = 0;
  for (const auto& item : items_)
    total += static_cast<std::size_t>(item.second.value().size());
  return total;
}

void ParameterSet::zero_grad() const {
  for (const auto& item : items_) item.second.zero_grad();
}

Scalar ParameterSet::grad_norm() const {
  Scalar sq = 0.0;
  for (const auto& item : items_)
    if (item.second.has_grad()) sq += item.second.node()->grad.squaredNorm();
  return std::sqrt(sq);
}

void ParameterSet::scale_grads(Scalar s) const {
  for (const auto& item : items_)
    if (item.second.has_grad()) item.second.node()->grad *= s;
}

Adam::Adam(const ParameterSet& params, AdamOptions options)
    : params_(&params), options_(options) {
  for (const auto& item : params.items()) {
    m_.push_back(Matrix::Zero(item.second.rows(), item.second.cols()));
    v_.push_back(Matrix::Zero(item.second.rows(), item.second.cols()));
  }
}

void Adam::step() {
  ++steps_;
  const Scalar bc1 = 1.0 - std::pow(options_.beta1, static_cast<Scalar>(steps_));
  const Scalar bc2 = 1.0 - std::pow(options_.beta2, static_cast<Scalar>(steps_));
  const auto& items = params_->items();
  for (std::size_t k = 0; k < items.size(); ++k) {
    Var param = items[k].second;
    Matrix& w = param.mutable_value();
    if (options_.weight_decay > 0.0) w *= (1.0 - options_.lr * options_.weight_decay);
    if (!param.has_grad()) continue;
    const Matrix& g = param.node()->grad;
    m_[k] = options_.beta1 * m_[k] + (1.0 - options_.beta1) * g;
    v_[k] = options_.beta2 * v_[k] + (1.0 - options_.beta2) * g.cwiseProduct(g);
    w.array() -= options_.lr * (m_[k].array() / bc1) /
                 ((v_[k].array() / bc2).sqrt() + options_.eps);
  }
}

GradCheckResult gradcheck(const std::function<Var()>& f,
                          std::vector<Var> inputs, Scalar step,
                          const std::function<bool()>& skip) {
  GradCheckResult result;
  for (Var& in : inputs) in.zero_grad();
  Var out = f();
  backward(out);
  std::vector<Matrix> analytic;
  analytic.reserve(inputs.size());
  for (Var& in : inputs) analytic.push_back(in.grad());

  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Matrix& x = inputs[k].mutable_value();
    for (Index i = 0; i < x.size(); ++i) {
      const Scalar orig = x(i);
      x(i) = orig + step;
      bool excluded = skip && skip();
      const Scalar fp = f().item();
      x(i) = orig - step;
      excluded = excluded || (skip && skip());
      const Scalar fm = f().item();
      x(i) = orig;
      if (excluded) {
        ++result.skipped;
        continue;
      }
      const Scalar numeric = (fp - fm) / (2.0 * step);
      const Scalar a = analytic[k](i);
      const Scalar abs_err = std::abs(a - numeric);
      const Scalar denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      result.max_abs_error = std::max(result.max_abs_error, abs_err);
      result.max_rel_error = std::max(result.max_rel_error, abs_err / denom);
      ++result.checked;
    }
  }
  return result;
}

}  // namespace dvc::ad
