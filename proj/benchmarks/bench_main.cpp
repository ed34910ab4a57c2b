#include <benchmark/benchmark.h>

#include <random>

#include "bridge/analysis.hpp"
#include "bridge/config.hpp"
#include "bridge/cvae.hpp"
#include "bridge/sampling.hpp"
#include "bridge/simulator.hpp"

namespace {

using namespace bridge;

const ProjectConfig& config() {
  static const ProjectConfig cfg = load_config(BRIDGE_DEFAULT_CONFIG);
  return cfg;
}

void BM_Evaluate(benchmark::State& state) {
  DesignFeatures x;
  x.h_girder = 1.2;
  x.t_girder = 0.15;
  x.n_p = static_cast<int>(state.range(0));
  x.h_p = 1.0;
  x.i = 2.0;
  x.w = 1.5;
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(x, config().site, config().loads));
}
BENCHMARK(BM_Evaluate)->Arg(2)->Arg(8);

void BM_CentralLhs(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(central_lhs(n, kDesignDims, 1));
}
BENCHMARK(BM_CentralLhs)->Arg(4000);

void BM_TrainingStep(benchmark::State& state) {
  const auto b = static_cast<Eigen::Index>(state.range(0));
  CvaeNetwork net({32, 64, 128, 64, 32}, 2, 0);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01;
  Matrix x = Matrix::Zero(b, kDesignWidth);
  Matrix y(b, kPerfWidth);
  Matrix eps(b, 2);
  for (Eigen::Index r = 0; r < b; ++r) {
    for (Eigen::Index c = 0; c < kContinuousDesign; ++c) x(r, c) = n01(rng);
    x(r, kContinuousDesign + r % kPierClasses) = 1.0;
    for (Eigen::Index c = 0; c < kPerfWidth; ++c) y(r, c) = c < 4 ? n01(rng) : double(r % 2);
    eps.row(r) << n01(rng), n01(rng);
  }
  const auto params = net.parameters();
  std::vector<Matrix> grads(params.size());
  grad::AdamState adam;
  for (auto _ : state) {
    grad::Tape t;
    const grad::Var xv = t.constant(x);
    const grad::Var yv = t.constant(y);
    const auto enc = net.encode(t, xv, grad::Mode::train);
    const grad::Var z = reparameterize(enc.mu, enc.logvar, t.constant(eps));
    const auto loss = loss_total(xv, net.decode(t, yv, z, grad::Mode::train), yv, enc.y_hat, enc.mu,
                                 enc.logvar, z, {1.0, 10.0, 0.1, 0.01});
    t.backward(loss.total);
    for (std::size_t k = 0; k < params.size(); ++k) grads[k] = t.parameter_grad(*params[k]);
    grad::adam_step(params, grads, adam, 1e-3);
  }
}
BENCHMARK(BM_TrainingStep)->Arg(256);

void BM_ParetoFront(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u;
  std::vector<std::array<double, 2>> pts(static_cast<std::size_t>(state.range(0)));
  for (auto& p : pts) p = {u(rng), u(rng)};
  for (auto _ : state) benchmark::DoNotOptimize(pareto_front(pts));
}
BENCHMARK(BM_ParetoFront)->Arg(1000)->Arg(100000);

}  // namespace
BENCHMARK_MAIN();
