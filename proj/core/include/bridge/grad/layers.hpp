#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "bridge/grad/tape.hpp"

namespace bridge::grad {

enum class Mode { train, eval };

inline constexpr double kLeakySlope = 0.01;

/// y = x W + b, W is in x out.
struct Dense {
  Matrix weight;
  Matrix bias;

  Dense() = default;
  /// Uniform(-1/sqrt(in), 1/sqrt(in)) initialization for weight and bias.
  Dense(Eigen::Index in, Eigen::Index out, std::mt19937_64& rng);

  Var forward(Tape& tape, Var x) const;
  Eigen::Index in_features() const { return weight.rows(); }
  Eigen::Index out_features() const { return weight.cols(); }
};

struct BatchNorm {
  Matrix gamma;
  Matrix beta;
  Matrix running_mean;
  Matrix running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNorm() = default;
  explicit BatchNorm(Eigen::Index features);

  /// Train mode normalizes with batch statistics and folds them into the
  /// running estimates (unbiased variance); eval mode reads the running
  /// estimates only.
  Var forward(Tape& tape, Var x, Mode mode);
  Var forward(Tape& tape, Var x) const;
};

/// Fully connected layer, leaky-ReLU, batch normalization.
struct MlpBlock {
  Dense dense;
  BatchNorm norm;

  MlpBlock() = default;
  MlpBlock(Eigen::Index in, Eigen::Index out, std::mt19937_64& rng);

  Var forward(Tape& tape, Var x, Mode mode);
  Var forward(Tape& tape, Var x) const;
};

struct AdamState {
  std::vector<Matrix> first;
  std::vector<Matrix> second;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update, in place.
void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state,
               double lr);

}  // namespace bridge::grad
