#pragma once

// Reverse-mode automatic differentiation over row-major double matrices
// (rank <= 2: batch x features).

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace bridge::grad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A forward op produced NaN or Inf.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid for the tape's lifetime.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
  bool requires_grad() const;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Receives the node's own id and the gradient of its output; pushes parent
  /// contributions through Tape::accumulate.
  using Backward = std::function<void(Tape&, std::size_t, const Matrix&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);
  /// Leaf that references an externally owned parameter matrix. Repeated
  /// calls with the same matrix return the same node.
  Var parameter(const Matrix& value);

  Var record(Matrix value, std::vector<Var> parents, Backward backward);

  /// Seeds d(root)/d(root) = 1; root must be 1x1.
  void backward(Var root);
  void backward(Var root, const Matrix& seed);

  void accumulate(std::size_t node, const Matrix& contribution);
  bool needs_grad(std::size_t node) const { return nodes_[node].requires_grad; }

  const Matrix& value(std::size_t node) const;
  const Matrix& grad(std::size_t node) const;
  /// Gradient for a bound parameter, or a zero matrix when it was never used.
  Matrix parameter_grad(const Matrix& param) const;

  /// True when `input` is an ancestor of `output` in the recorded graph.
  bool depends_on(Var output, Var input) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    std::vector<std::size_t> parents;
    Backward backward;
    bool requires_grad = false;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  std::unordered_map<const Matrix*, std::size_t> params_;
};

// Forward ops. Shape mismatches throw std::invalid_argument; non-finite
// outputs throw NumericalError.
Var matmul(Var a, Var b);
Var add_bias(Var x, Var bias);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var exp(Var a);
Var square(Var a);
Var leaky_relu(Var a, double alpha);
Var transpose(Var a);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var sum(Var a);
Var reduce_mean(Var a);
/// Column means, 1 x cols.
Var mean_rows(Var a);

/// Batch normalization with batch statistics (biased variance). The batch
/// mean and biased variance are returned through the out-parameters.
Var batchnorm_train(Var x, Var gamma, Var beta, double eps, Matrix* batch_mean,
                    Matrix* batch_var);
/// Batch normalization with fixed statistics.
Var batchnorm_eval(Var x, Var gamma, Var beta, const Matrix& mean, const Matrix& var,
                   double eps);

/// Mean over all elements of (pred - target)^2.
Var mse(Var pred, Var target);
/// Mean over all elements of the logistic loss; targets in [0, 1].
Var binary_ce_with_logits(Var logits, Var targets);
/// Mean over rows of -sum_k t_k log softmax(logits)_k; targets are row
/// distributions (usually one-hot).
Var softmax_ce(Var logits, Var targets);

}  // namespace bridge::grad
