#ifndef DVC_AUTODIFF_HPP_
#define DVC_AUTODIFF_HPP_

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Var is a handle to a node in a dynamically built tape. Every op records
// its parents and a backward closure only when at least one parent requires a
// gradient and gradient recording is enabled, so forward passes over
// constants (matching costs, inference) build no graph.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dvc::ad {

using Scalar = double;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Index = Eigen::Index;

struct Node {
  Matrix value;
  Matrix grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Matrix& grad_ref() {
    if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  // Mutating a value that already feeds a live graph is undefined; only used
  // on leaves (parameters, optimizer updates, finite differences).
  Matrix& mutable_value() { return node_->value; }
  // Zero matrix of the value's shape when nothing has been accumulated.
  Matrix grad() const;
  bool has_grad() const { return node_ && node_->grad.size() != 0; }
  void zero_grad() const { node_->grad.resize(0, 0); }

  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Scalar item() const;
  Scalar operator()(Index r, Index c) const { return node_->value(r, c); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Leaves.
Var constant(Matrix value);
Var constant(Scalar value);
Var leaf(Matrix value);  // requires_grad == true

// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

// Seeds d(root)/d(root) = 1 (root must be 1x1) and propagates to every node
// reachable from root. Leaf gradients accumulate across calls.
void backward(const Var& root, Scalar seed = 1.0);

// --- elementwise binary ops with broadcasting ---------------------------
// Shapes must be equal, or one operand must be 1x1, 1xC or Rx1 against RxC.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);  // elementwise, not matmul
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator*(Scalar s, const Var& a);
Var operator+(const Var& a, Scalar s);
Var operator+(Scalar s, const Var& a);
Var operator-(Scalar s, const Var& a);

// --- unary ----------------------------------------------------------------
Var scale(const Var& a, Scalar s);
Var exp(const Var& a);
Var log(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
Var pow(const Var& a, Scalar p);        // a > 0 elementwise
Var clamp(const Var& a, Scalar lo, Scalar hi);  // zero gradient where clipped
Var clamp_min(const Var& a, Scalar lo);
Var detach(const Var& a);

// --- linear algebra and shape ---------------------------------------------
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Index start, Index count);
Var slice_rows(const Var& a, Index start, Index count);
Var gather_rows(const Var& a, std::span<const int> rows);
Var element(const Var& a, Index r, Index c);
Var pick_per_row(const Var& a, std::span<const int> cols);  // Rx1

// --- reductions -----------------------------------------------------------
Var sum(const Var& a);            // 1x1
Var mean(const Var& a);           // 1x1
Var sum_rows(const Var& a);       // 1xC, sums over rows
Var sum_cols(const Var& a);       // Rx1, sums over columns
Var max_over_rows(const Var& a);  // 1xC, gradient to first argmax
Var max_over_cols(const Var& a);  // Rx1, gradient to first argmax

// --- fused neural-network ops ----------------------------------------------
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta,
                    Scalar eps = 1e-5);
// Each row divided by max(||row||, floor).
Var normalize_rows(const Var& x, Scalar floor);
// Elementwise max(x,0) - x*y + log(1 + exp(-|x|)).
Var bce_with_logits(const Var& logits, const Matrix& targets);

// --- interval geometry -----------------------------------------------------
// Column vectors of starts/ends; result (i,j) is the temporal IoU between
// segment i of `a` and segment j of `b`. Zero-measure unions give 0.
Var pairwise_tiou(const Var& a_start, const Var& a_end, const Var& b_start,
                  const Var& b_end);
// Row-aligned generalized IoU for equal-length column vectors; Nx1.
Var paired_giou(const Var& a_start, const Var& a_end, const Var& b_start,
                const Var& b_end);

// --- parameters and optimization ----------------------------------------

// Ordered collection of named trainable leaves.
class ParameterSet {
 public:
  Var add(const std::string& name, Matrix init);
  const Var* find(const std::string& name) const;
  const std::vector<std::pair<std::string, Var>>& items() const {
    return items_;
  }
  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;
  void zero_grad() const;
  // Global L2 norm of all accumulated gradients.
  Scalar grad_norm() const;
  void scale_grads(Scalar s) const;

 private:
  std::vector<std::pair<std::string, Var>> items_;
};

struct AdamOptions {
  Scalar lr = 1e-4;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar eps = 1e-8;
  Scalar weight_decay = 1e-4;  // decoupled
};

// Adam with decoupled weight decay.
class Adam {
 public:
  Adam(const ParameterSet& params, AdamOptions options);

  void step();
  long steps() const { return steps_; }
  void set_lr(Scalar lr) { options_.lr = lr; }
  const AdamOptions& options() const { return options_; }

  // Moment buffers, parallel to ParameterSet::items().
  std::vector<Matrix>& first_moments() { return m_; }
  std::vector<Matrix>& second_moments() { return v_; }
  void set_steps(long steps) { steps_ = steps; }

 private:
  const ParameterSet* params_;
  AdamOptions options_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long steps_ = 0;
};

// Scalar function of a set of leaves, used by gradient checks.
struct GradCheckResult {
  Scalar max_rel_error = 0.0;
  Scalar max_abs_error = 0.0;
  long checked = 0;
  long skipped = 0;
};

// Compares backward() against central differences of `f` for every entry of
// every input. `skip` lets callers exclude points near non-smooth clamps.
GradCheckResult gradcheck(const std::function<Var()>& f,
                          std::vector<Var> inputs, Scalar step = 1e-4,
                          const std::function<bool()>& skip = nullptr);

}  // namespace dvc::ad

#endif  // DVC_AUTODIFF_HPP_
