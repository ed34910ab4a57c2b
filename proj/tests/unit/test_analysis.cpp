#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "bridge/analysis.hpp"
#include "fixtures.hpp"

namespace bridge {
namespace {

using Point = std::array<double, 2>;
constexpr std::size_t kPierVariable = 2;

bool dominates(const Point& a, const Point& b, std::array<Direction, 2> dir) {
  bool strictly = false;
  for (int k = 0; k < 2; ++k) {
    const double av = dir[k] == Direction::minimize ? a[k] : -a[k];
    const double bv = dir[k] == Direction::minimize ? b[k] : -b[k];
    if (av > bv) return false;
    if (av < bv) strictly = true;
  }
  return strictly;
}

std::vector<std::size_t> brute_force_front(const std::vector<Point>& pts,
                                           std::array<Direction, 2> dir) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < pts.size() && !dominated; ++j) {
      dominated = j != i && dominates(pts[j], pts[i], dir);
    }
    if (!dominated) out.push_back(i);
  }
  return out;
}

TEST(Pareto, SmallCases) {
  EXPECT_TRUE(pareto_front(std::vector<Point>{}).indices.empty());
  EXPECT_EQ(pareto_front(std::vector<Point>{{1, 2}, {2, 1}}).indices, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(pareto_front(std::vector<Point>{{1, 1}, {2, 2}}).indices, (std::vector<std::size_t>{0}));
  EXPECT_EQ(pareto_front(std::vector<Point>{{1, 1}}).indices, (std::vector<std::size_t>{0}));
  const std::vector<Point> pts{{1, 5}, {2, 2}, {3, 3}, {5, 1}, {2, 2}, {1, 6}};
  EXPECT_EQ(pareto_front(pts).indices, (std::vector<std::size_t>{0, 1, 3, 4}));
  EXPECT_EQ(pareto_front(pts, {Direction::maximize, Direction::maximize}).indices,
            (std::vector<std::size_t>{2, 3, 5}));
  EXPECT_EQ(pareto_front(pts, {Direction::minimize, Direction::maximize}).indices,
            (std::vector<std::size_t>{5}));
}

TEST(Pareto, MatchesBruteForceWithTies) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> coarse(0, 15);
  std::uniform_real_distribution<double> fine(0.0, 1.0);
  const std::array<std::array<Direction, 2>, 3> dirs{{{Direction::minimize, Direction::minimize},
                                                      {Direction::maximize, Direction::minimize},
                                                      {Direction::maximize, Direction::maximize}}};
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Point> pts(200);
    for (auto& p : pts) {
      p = trial % 2 == 0 ? Point{double(coarse(rng)), double(coarse(rng))} : Point{fine(rng), fine(rng)};
    }
    for (const auto& d : dirs) {
      const auto r = pareto_front(pts, d);
      EXPECT_EQ(r.indices, brute_force_front(pts, d)) << "trial " << trial;
      EXPECT_EQ(r.directions, d);
    }
  }
}

TEST(Pareto, RejectsNonFinite) {
  const std::vector<Point> pts{{1, std::nan("")}};
  EXPECT_THROW(pareto_front(pts), std::invalid_argument);
}

TEST(Regression, PerfectAndMeanPredictors) {
  const std::vector<double> truth{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(regression_stats(truth, truth).r2, 1.0);
  EXPECT_DOUBLE_EQ(regression_stats(truth, truth).rmse, 0.0);
  const std::vector<double> mean(4, 2.5);
  EXPECT_NEAR(regression_stats(truth, mean).r2, 0.0, 1e-15);
  const std::vector<double> off{2, 3, 4, 5};
  EXPECT_NEAR(regression_stats(truth, off).r2, 1.0 - 4.0 / 5.0, 1e-15);
  EXPECT_NEAR(regression_stats(truth, off).rmse, 1.0, 1e-15);
  EXPECT_THROW(regression_stats(truth, std::span<const double>(off).subspan(0, 2)), std::invalid_argument);
}

TEST(Regression, Pearson) {
  const std::vector<double> a{1, 2, 3, 4};
  const std::vector<double> b{2, 4, 6, 8};
  const std::vector<double> c{4, 3, 2, 1};
  EXPECT_NEAR(pearson(a, b), 1.0, 1e-15);
  EXPECT_NEAR(pearson(a, c), -1.0, 1e-15);
}

TEST(Surrogate, ReportCountsFlagsAndTargets) {
  auto rows = testing::small_dataset().ok_records();
  rows.resize(4);
  std::vector<PerformanceMetrics> pred;
  for (const auto& r : rows) pred.push_back(r.y);
  pred[0].clearance_ok = !pred[0].clearance_ok;
  const auto rep = surrogate_report(rows, pred);
  for (const auto& t : rep.targets) EXPECT_DOUBLE_EQ(t.stats.r2, 1.0);
  EXPECT_DOUBLE_EQ(rep.flags[0].accuracy, 0.75);
  EXPECT_DOUBLE_EQ(rep.flags[1].accuracy, 1.0);
  EXPECT_EQ(rep.targets[3].name, "cost");
}

TEST(Surrogate, UsesTheTestSplit) {
  const auto& c = testing::small_checkpoint();
  const auto rep = surrogate_report(testing::small_dataset(), c);
  EXPECT_EQ(rep.ids, c.split.test);
  EXPECT_GT(rep.targets[3].stats.r2, 0.5);
}

TEST(Sensitivity, MatchesFiniteDifferencesOfPredict) {
  const auto& c = testing::small_checkpoint();
  const DesignFeatures x = testing::nominal_design();
  const SensitivityReport r = sensitivity(x, c);
  ASSERT_EQ(r.jacobian.rows(), 6);
  ASSERT_EQ(r.jacobian.cols(), 12);
  const auto base = x.as_array();
  for (std::size_t v = 0; v < kDesignDims; ++v) {
    if (v == kPierVariable) continue;
    const double step = 1e-4 * (c.space.max[v] - c.space.min[v]);
    auto up = base;
    auto down = base;
    up[v] += step;
    down[v] -= step;
    const Prediction pu = predict(DesignFeatures::from_array(up), c);
    const Prediction pd = predict(DesignFeatures::from_array(down), c);
    for (std::size_t j = 0; j < kMetricDims; ++j) {
      const double fd = j < kContinuousMetrics
                            ? (pu.metrics.as_array()[j] - pd.metrics.as_array()[j]) / (2 * step)
                            : (pu.standardized[j] - pd.standardized[j]) / (2 * step);
      const double got = r.physical[j][v];
      EXPECT_LE(std::abs(got - fd), 1e-3 * std::max({std::abs(got), std::abs(fd), 1e-6}))
          << "target " << j << " variable " << v;
    }
  }
}

TEST(Sensitivity, PierEntryIsAdjacentClassDifference) {
  const auto& c = testing::small_checkpoint();
  DesignFeatures x = testing::nominal_design();
  const auto mid = sensitivity(x, c);
  EXPECT_DOUBLE_EQ(mid.standardized[3][kPierVariable], mid.jacobian(3, 5 + 3) - mid.jacobian(3, 5 + 2));
  x.n_p = 8;
  const auto top = sensitivity(x, c);
  EXPECT_DOUBLE_EQ(top.standardized[3][kPierVariable], top.jacobian(3, 11) - top.jacobian(3, 10));
  EXPECT_DOUBLE_EQ(top.physical[3][kPierVariable],
                   top.standardized[3][kPierVariable] * c.standardizer.metric_std[3]);
}

TEST(Sensitivity, SwarmIsSeededAndSized) {
  const auto& c = testing::small_checkpoint();
  PerformanceMetrics req{0.5, 0.1, 10.0, 60000.0, true, true};
  const auto a = sensitivity_swarm(req, 25, 4, c);
  const auto b = sensitivity_swarm(req, 25, 4, c);
  ASSERT_EQ(a.designs.size(), 25u);
  ASSERT_EQ(a.cost.size(), 25u);
  for (std::size_t v = 0; v < kDesignDims; ++v) {
    ASSERT_EQ(a.physical[v].size(), 25u);
    EXPECT_EQ(a.physical[v], b.physical[v]);
    EXPECT_GE(a.positive_fraction[v], 0.0);
    EXPECT_LE(a.positive_fraction[v], 1.0);
  }
  const auto first = sensitivity(a.designs[0], c);
  EXPECT_DOUBLE_EQ(a.physical[0][0], first.physical[3][0]);
  EXPECT_THROW(sensitivity_swarm(req, 5, 1, c, 6), std::invalid_argument);
}

TEST(Latent, MapCoversTheTestSplit) {
  const auto& c = testing::small_checkpoint();
  const auto m = latent_map(testing::small_dataset(), c);
  ASSERT_EQ(m.points.size(), c.split.test.size());
  for (std::size_t k = 0; k < m.points.size(); ++k) {
    EXPECT_EQ(m.points[k].id, c.split.test[k]);
    EXPECT_EQ(m.points[k].mu.size(), 2u);
  }
  ASSERT_EQ(m.abs_correlation.size(), 2u);
  double sum = 0.0;
  for (const auto& row : m.abs_correlation) {
    for (double v : row) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      sum += v;
    }
  }
  EXPECT_NEAR(m.mean_abs_correlation, sum / 8.0, 1e-12);
  // Pure function of the checkpoint and rows.
  const auto again = latent_map(testing::small_dataset(), c);
  EXPECT_EQ(again.points[3].mu, m.points[3].mu);
}

TEST(Export, CsvShapes) {
  const auto& c = testing::small_checkpoint();
  const auto m = latent_map(testing::small_dataset(), c);
  const std::string csv = latent_csv(m);
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), m.points.size() + 1);
  EXPECT_EQ(csv.rfind("id,z0,z1", 0), 0u);
  const auto j = to_json(m);
  EXPECT_EQ(j["points"].size(), m.points.size());
  EXPECT_EQ(j["points"][0]["z"].size(), 2u);
  const auto s = to_json(sensitivity(testing::nominal_design(), c));
  EXPECT_EQ(s["jacobian"].size(), 6u);
}

}  // namespace
}  // namespace bridge
