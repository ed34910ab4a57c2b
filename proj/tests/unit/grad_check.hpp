#pragma once

// Central finite-difference oracle for tape gradients.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "bridge/grad/tape.hpp"

namespace bridge::testing {

using grad::Matrix;
using grad::Tape;
using grad::Var;

using GraphBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                            double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = n(rng);
  return m;
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

/// Builds the graph over variable leaves and checks every leaf entry.
inline void expect_gradients_match(std::vector<Matrix> inputs, const GraphBuilder& build,
                                   double tol = 1e-6, double step = 1e-6) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& m : inputs) leaves.push_back(tape.variable(m));
  const Var out = build(tape, leaves);
  ASSERT_EQ(out.value().size(), 1);
  tape.backward(out);
  std::vector<Matrix> analytic;
  for (const auto& v : leaves) {
    analytic.push_back(v.grad().size() ? v.grad() : Matrix::Zero(v.rows(), v.cols()));
  }

  auto eval = [&](const std::vector<Matrix>& in) {
    Tape t;
    std::vector<Var> l;
    for (const auto& m : in) l.push_back(t.variable(m));
    return build(t, l).scalar();
  };
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (Eigen::Index e = 0; e < inputs[k].size(); ++e) {
      const double saved = inputs[k].data()[e];
      inputs[k].data()[e] = saved + step;
      const double up = eval(inputs);
      inputs[k].data()[e] = saved - step;
      const double down = eval(inputs);
      inputs[k].data()[e] = saved;
      const double numeric = (up - down) / (2 * step);
      EXPECT_LE(relative_error(analytic[k].data()[e], numeric), tol)
          << "input " << k << " entry " << e << ": analytic " << analytic[k].data()[e]
          << " numeric " << numeric;
    }
  }
}

}  // namespace bridge::testing
