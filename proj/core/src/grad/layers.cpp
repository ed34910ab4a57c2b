#include "bridge/grad/layers.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace bridge::grad {

Dense::Dense(Eigen::Index in, Eigen::Index out, std::mt19937_64& rng)
    : weight(in, out), bias(1, out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index r = 0; r < in; ++r) {
    for (Eigen::Index c = 0; c < out; ++c) weight(r, c) = dist(rng);
  }
  for (Eigen::Index c = 0; c < out; ++c) bias(0, c) = dist(rng);
}

Var Dense::forward(Tape& tape, Var x) const {
  return add_bias(matmul(x, tape.parameter(weight)), tape.parameter(bias));
}

BatchNorm::BatchNorm(Eigen::Index features)
    : gamma(Matrix::Ones(1, features)),
      beta(Matrix::Zero(1, features)),
      running_mean(Matrix::Zero(1, features)),
      running_var(Matrix::Ones(1, features)) {}

Var BatchNorm::forward(Tape& tape, Var x, Mode mode) {
  if (mode == Mode::eval) return std::as_const(*this).forward(tape, x);
  Matrix mean, var;
  Var out = batchnorm_train(x, tape.parameter(gamma), tape.parameter(beta), eps, &mean, &var);
  const double n = static_cast<double>(x.rows());
  running_mean = (1.0 - momentum) * running_mean + momentum * mean;
  running_var = (1.0 - momentum) * running_var + momentum * (var * (n / (n - 1.0)));
  return out;
}

Var BatchNorm::forward(Tape& tape, Var x) const {
  return batchnorm_eval(x, tape.parameter(gamma), tape.parameter(beta), running_mean,
                        running_var, eps);
}

MlpBlock::MlpBlock(Eigen::Index in, Eigen::Index out, std::mt19937_64& rng)
    : dense(in, out, rng), norm(out) {}

Var MlpBlock::forward(Tape& tape, Var x, Mode mode) {
  return norm.forward(tape, leaky_relu(dense.forward(tape, x), kLeakySlope), mode);
}

Var MlpBlock::forward(Tape& tape, Var x) const {
  return norm.forward(tape, leaky_relu(dense.forward(tape, x), kLeakySlope));
}

void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state,
               double lr) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: size mismatch");
  if (state.first.empty()) {
    for (const Matrix* p : params) {
      state.first.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.second.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (state.first.size() != params.size()) throw std::invalid_argument("adam_step: state mismatch");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k];
    const Matrix& g = grads[k];
    if (g.rows() != p.rows() || g.cols() != p.cols()) {
      throw std::invalid_argument("adam_step: gradient shape mismatch");
    }
    state.first[k] = state.beta1 * state.first[k] + (1.0 - state.beta1) * g;
    state.second[k] = state.beta2 * state.second[k] + (1.0 - state.beta2) * g.cwiseAbs2();
    p.array() -= lr * (state.first[k].array() / c1) /
                 ((state.second[k].array() / c2).sqrt() + state.eps);
  }
}

}  // namespace bridge::grad
