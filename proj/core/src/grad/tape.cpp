#include "bridge/grad/tape.hpp"

#include <cmath>
#include <string>

namespace bridge::grad {
namespace {

void check_finite(const Matrix& m, const char* op) {
  if (!m.allFinite()) throw NumericalError(std::string("non-finite output in ") + op);
}

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void require_same_tape(const Var& a, const Var& b) {
  require(a.valid() && b.valid() && &a.tape() == &b.tape(), "operands live on different tapes");
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  require_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string("shape mismatch in ") + op);
  }
}

Matrix sigmoid(const Matrix& x) {
  return x.unaryExpr([](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

Matrix row_softmax(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->needs_grad(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw std::invalid_argument("scalar() on a non-scalar node");
  return v(0, 0);
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::parameter(const Matrix& value) {
  if (auto it = params_.find(&value); it != params_.end()) return Var(this, it->second);
  Node n;
  n.external = &value;
  n.requires_grad = true;
  Var v = push(std::move(n));
  params_.emplace(&value, v.id());
  return v;
}

Var Tape::record(Matrix value, std::vector<Var> parents, Backward backward) {
  Node n;
  n.value = std::move(value);
  for (const Var& p : parents) {
    if (&p.tape() != this) throw std::invalid_argument("parent recorded on another tape");
    n.parents.push_back(p.id());
    n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

const Matrix& Tape::value(std::size_t node) const {
  const Node& n = nodes_.at(node);
  return n.external ? *n.external : n.value;
}

const Matrix& Tape::grad(std::size_t node) const { return nodes_.at(node).grad; }

Matrix Tape::parameter_grad(const Matrix& param) const {
  const auto it = params_.find(&param);
  if (it == params_.end() || nodes_[it->second].grad.size() == 0) {
    return Matrix::Zero(param.rows(), param.cols());
  }
  return nodes_[it->second].grad;
}

void Tape::accumulate(std::size_t node, const Matrix& contribution) {
  Node& n = nodes_[node];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = contribution;
  } else {
    n.grad += contribution;
  }
}

void Tape::backward(Var root) {
  if (root.value().size() != 1) throw std::invalid_argument("backward() needs a scalar root");
  backward(root, Matrix::Ones(1, 1));
}

void Tape::backward(Var root, const Matrix& seed) {
  if (&root.tape() != this) throw std::invalid_argument("root recorded on another tape");
  const Matrix& rv = root.value();
  if (seed.rows() != rv.rows() || seed.cols() != rv.cols()) {
    throw std::invalid_argument("backward seed shape mismatch");
  }
  for (Node& n : nodes_) n.grad.resize(0, 0);
  nodes_[root.id()].grad = seed;
  // Parents always precede children, so descending ids is a topological order.
  for (std::size_t k = root.id() + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (!n.backward || n.grad.size() == 0) continue;
    n.backward(*this, k, n.grad);
  }
}

bool Tape::depends_on(Var output, Var input) const {
  std::vector<bool> seen(nodes_.size(), false);
  std::vector<std::size_t> stack{output.id()};
  while (!stack.empty()) {
    const std::size_t k = stack.back();
    stack.pop_back();
    if (k == input.id()) return true;
    if (seen[k]) continue;
    seen[k] = true;
    for (std::size_t p : nodes_[k].parents) stack.push_back(p);
  }
  return false;
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  require(a.cols() == b.rows(), "shape mismatch in matmul");
  Matrix out = a.value() * b.value();
  check_finite(out, "matmul");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t, const Matrix& g) {
    if (t.needs_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.needs_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var add_bias(Var x, Var bias) {
  require_same_tape(x, bias);
  require(bias.rows() == 1 && bias.cols() == x.cols(), "shape mismatch in add_bias");
  Matrix out = x.value().rowwise() + bias.value().row(0);
  check_finite(out, "add_bias");
  const std::size_t ix = x.id(), ib = bias.id();
  return x.tape().record(std::move(out), {x, bias}, [ix, ib](Tape& t, std::size_t, const Matrix& g) {
    t.accumulate(ix, g);
    if (t.needs_grad(ib)) t.accumulate(ib, g.colwise().sum());
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Matrix out = a.value() + b.value();
  check_finite(out, "add");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Matrix out = a.value() - b.value();
  check_finite(out, "sub");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t, const Matrix& g) {
    t.accumulate(ia, g);
    if (t.needs_grad(ib)) t.accumulate(ib, -g);
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  check_finite(out, "mul");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t, const Matrix& g) {
    if (t.needs_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.needs_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

Var scale(Var a, double s) {
  Matrix out = a.value() * s;
  check_finite(out, "scale");
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, s](Tape& t, std::size_t, const Matrix& g) {
    t.accumulate(ia, g * s);
  });
}

Var add_scalar(Var a, double s) {
  Matrix out = a.value().array() + s;
  check_finite(out, "add_scalar");
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a},
                         [ia](Tape& t, std::size_t, const Matrix& g) { t.accumulate(ia, g); });
}

Var exp(Var a) {
  Matrix out = a.value().array().exp();
  check_finite(out, "exp");
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, std::size_t self, const Matrix& g) {
    t.accumulate(ia, g.cwiseProduct(t.value(self)));
  });
}

Var square(Var a) {
  Matrix out = a.value().array().square();
  check_finite(out, "square");
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, std::size_t, const Matrix& g) {
    t.accumulate(ia, 2.0 * g.cwiseProduct(t.value(ia)));
  });
}

Var leaky_relu(Var a, double alpha) {
  Matrix out = a.value().unaryExpr([alpha](double v) { return v > 0.0 ? v : alpha * v; });
  check_finite(out, "leaky_relu");
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, alpha](Tape& t, std::size_t, const Matrix& g) {
    const Matrix slope =
        t.value(ia).unaryExpr([alpha](double v) { return v > 0.0 ? 1.0 : alpha; });
    t.accumulate(ia, g.cwiseProduct(slope));
  });
}

Var transpose(Var a) {
  Matrix out = a.value().transpose();
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, std::size_t, const Matrix& g) {
    t.accumulate(ia, g.transpose());
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols needs at least one operand");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    require_same_tape(parts.front(), p);
    require(p.rows() == rows, "row mismatch in concat_cols");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<std::size_t, Eigen::Index>> layout;
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    layout.emplace_back(p.id(), offset);
    offset += p.cols();
  }
  return parts.front().tape().record(
      std::move(out), parts, [layout](Tape& t, std::size_t, const Matrix& g) {
        for (const auto& [id, off] : layout) {
          if (t.needs_grad(id)) t.accumulate(id, g.middleCols(off, t.value(id).cols()));
        }
      });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols out of range");
  Matrix out = a.value().middleCols(start, count);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a},
                         [ia, start, count](Tape& t, std::size_t, const Matrix& g) {
                           const Matrix& av = t.value(ia);
                           Matrix full = Matrix::Zero(av.rows(), av.cols());
                           full.middleCols(start, count) = g;
                           t.accumulate(ia, full);
                         });
}

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  check_finite(out, "sum");
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, std::size_t, const Matrix& g) {
    const Matrix& av = t.value(ia);
    t.accumulate(ia, Matrix::Constant(av.rows(), av.cols(), g(0, 0)));
  });
}

Var reduce_mean(Var a) {
  require(a.value().size() > 0, "reduce_mean of an empty tensor");
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var mean_rows(Var a) {
  require(a.rows() > 0, "mean_rows of an empty batch");
  Matrix out = a.value().colwise().mean();
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, std::size_t, const Matrix& g) {
    const Matrix& av = t.value(ia);
    Matrix full = g.replicate(av.rows(), 1) / static_cast<double>(av.rows());
    t.accumulate(ia, full);
  });
}

Var batchnorm_train(Var x, Var gamma, Var beta, double eps, Matrix* batch_mean,
                    Matrix* batch_var) {
  require_same_tape(x, gamma);
  require_same_tape(x, beta);
  const Eigen::Index n = x.rows();
  const Eigen::Index f = x.cols();
  require(n >= 2, "batchnorm_train needs a batch of at least 2 rows");
  require(gamma.rows() == 1 && gamma.cols() == f && beta.rows() == 1 && beta.cols() == f,
          "shape mismatch in batchnorm_train");

  const Matrix& xv = x.value();
  const Matrix mean = xv.colwise().mean();
  const Matrix centered = xv.rowwise() - mean.row(0);
  const Matrix var = centered.array().square().colwise().mean();
  const Matrix inv_std = (var.array() + eps).rsqrt();
  Matrix xhat = centered.array().rowwise() * inv_std.row(0).array();
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
               beta.value().row(0).array();
  check_finite(out, "batchnorm_train");
  if (batch_mean) *batch_mean = mean;
  if (batch_var) *batch_var = var;

  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record(
      std::move(out), {x, gamma, beta},
      [ix, ig, ib, xhat = std::move(xhat), inv_std](Tape& t, std::size_t, const Matrix& g) {
        if (t.needs_grad(ib)) t.accumulate(ib, g.colwise().sum());
        if (t.needs_grad(ig)) t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
        if (t.needs_grad(ix)) {
          const double rows = static_cast<double>(g.rows());
          const Matrix dxhat = g.array().rowwise() * t.value(ig).row(0).array();
          const Matrix sum_d = dxhat.colwise().sum();
          const Matrix sum_dx = dxhat.cwiseProduct(xhat).colwise().sum();
          Matrix dx = (rows * dxhat.array()).matrix();
          dx.rowwise() -= sum_d.row(0);
          dx -= (xhat.array().rowwise() * sum_dx.row(0).array()).matrix();
          dx = (dx.array().rowwise() * (inv_std.row(0).array() / rows)).matrix();
          t.accumulate(ix, dx);
        }
      });
}

Var batchnorm_eval(Var x, Var gamma, Var beta, const Matrix& mean, const Matrix& var,
                   double eps) {
  require_same_tape(x, gamma);
  require_same_tape(x, beta);
  const Eigen::Index f = x.cols();
  require(gamma.cols() == f && beta.cols() == f && mean.cols() == f && var.cols() == f,
          "shape mismatch in batchnorm_eval");
  const Matrix inv_std = (var.array() + eps).rsqrt();
  Matrix xhat = (x.value().rowwise() - mean.row(0)).array().rowwise() * inv_std.row(0).array();
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
               beta.value().row(0).array();
  check_finite(out, "batchnorm_eval");
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record(
      std::move(out), {x, gamma, beta},
      [ix, ig, ib, xhat = std::move(xhat), inv_std](Tape& t, std::size_t, const Matrix& g) {
        if (t.needs_grad(ib)) t.accumulate(ib, g.colwise().sum());
        if (t.needs_grad(ig)) t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
        if (t.needs_grad(ix)) {
          const Matrix scale_row = t.value(ig).cwiseProduct(inv_std);
          t.accumulate(ix, (g.array().rowwise() * scale_row.row(0).array()).matrix());
        }
      });
}

Var mse(Var pred, Var target) {
  require_same_shape(pred, target, "mse");
  require(pred.value().size() > 0, "mse of empty tensors");
  return reduce_mean(square(sub(pred, target)));
}

Var binary_ce_with_logits(Var logits, Var targets) {
  require_same_shape(logits, targets, "binary_ce_with_logits");
  const Matrix& l = logits.value();
  const Matrix& y = targets.value();
  require(l.size() > 0, "binary_ce_with_logits of empty tensors");
  const double n = static_cast<double>(l.size());
  const Matrix per = l.cwiseMax(0.0) - l.cwiseProduct(y) +
                     (1.0 + (-l.array().abs()).exp()).log().matrix();
  Matrix out(1, 1);
  out(0, 0) = per.sum() / n;
  check_finite(out, "binary_ce_with_logits");
  const std::size_t il = logits.id(), iy = targets.id();
  return logits.tape().record(std::move(out), {logits, targets},
                              [il, iy, n](Tape& t, std::size_t, const Matrix& g) {
                                const Matrix p = sigmoid(t.value(il));
                                if (t.needs_grad(il)) {
                                  t.accumulate(il, (p - t.value(iy)) * (g(0, 0) / n));
                                }
                                if (t.needs_grad(iy)) {
                                  t.accumulate(iy, -t.value(il) * (g(0, 0) / n));
                                }
                              });
}

Var softmax_ce(Var logits, Var targets) {
  require_same_shape(logits, targets, "softmax_ce");
  const Matrix& l = logits.value();
  const Matrix& y = targets.value();
  require(l.rows() > 0 && l.cols() > 0, "softmax_ce of empty tensors");
  const double rows = static_cast<double>(l.rows());
  Matrix log_p(l.rows(), l.cols());
  for (Eigen::Index r = 0; r < l.rows(); ++r) {
    const double m = l.row(r).maxCoeff();
    const double lse = m + std::log((l.row(r).array() - m).exp().sum());
    log_p.row(r) = l.row(r).array() - lse;
  }
  Matrix out(1, 1);
  out(0, 0) = -(y.cwiseProduct(log_p)).sum() / rows;
  check_finite(out, "softmax_ce");
  const std::size_t il = logits.id(), iy = targets.id();
  return logits.tape().record(
      std::move(out), {logits, targets},
      [il, iy, rows, log_p = std::move(log_p)](Tape& t, std::size_t, const Matrix& g) {
        const Matrix& yv = t.value(iy);
        if (t.needs_grad(il)) {
          const Matrix p = row_softmax(t.value(il));
          const Eigen::VectorXd mass = yv.rowwise().sum();
          Matrix d = p.array().colwise() * mass.array();
          d -= yv;
          t.accumulate(il, d * (g(0, 0) / rows));
        }
        if (t.needs_grad(iy)) t.accumulate(iy, -log_p * (g(0, 0) / rows));
      });
}

}  // namespace bridge::grad
