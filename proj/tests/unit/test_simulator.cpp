#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "bridge/simulator.hpp"
#include "fixtures.hpp"

namespace bridge {
namespace {

constexpr double kEI = 5.0e6;  // kN m^2
constexpr double kMass = 6000.0;  // kg/m
constexpr double kLoad = 30.0;  // kN/m

TEST(Beam, SingleSpanMatchesClosedForm) {
  const double L = 25.0;
  const BeamModel m = make_beam({L}, kEI, kMass, kLoad, 0.0, 8);
  const StaticResult r = solve_static(m, {1.0, 0.0});
  const double delta = 5.0 * kLoad * std::pow(L, 4) / (384.0 * kEI);
  const double moment = kLoad * L * L / 8.0;
  EXPECT_NEAR(r.max_abs_deflection, delta, 5e-3 * delta);
  EXPECT_NEAR(r.max_abs_moment, moment, 5e-3 * moment);
  ASSERT_EQ(r.reactions.size(), 2u);
  EXPECT_NEAR(r.reactions[0], kLoad * L / 2.0, 1e-6);
  EXPECT_NEAR(r.reactions[1], kLoad * L / 2.0, 1e-6);
}

TEST(Beam, SingleSpanFrequency) {
  const double L = 25.0;
  const BeamModel m = make_beam({L}, kEI, kMass, kLoad, 0.0, 8);
  const double f = std::numbers::pi / (2.0 * L * L) * std::sqrt(kEI * 1e3 / kMass);
  EXPECT_NEAR(first_frequency(m), f, 1e-2 * f);
}

TEST(Beam, TwoSpanSupportMomentThreeMomentEquation) {
  for (auto [a, b] : {std::pair{20.0, 20.0}, {15.0, 30.0}}) {
    const BeamModel m = make_beam({a, b}, kEI, kMass, kLoad, 0.0, 8);
    const StaticResult r = solve_static(m, {1.0, 0.0});
    // 2 M_B (L1 + L2) = -q (L1^3 + L2^3) / 4 with pinned ends.
    const double mb = -kLoad * (a * a * a + b * b * b) / (8.0 * (a + b));
    EXPECT_NEAR(r.nodal_moment[m.support_nodes[1]], mb, 1e-2 * std::abs(mb));
    double sum = 0.0;
    for (double rv : r.reactions) sum += rv;
    EXPECT_NEAR(sum, kLoad * (a + b), 1e-6);
  }
}

TEST(Beam, ThreeEqualSpans) {
  const double L = 20.0;
  const BeamModel m = make_beam({L, L, L}, kEI, kMass, kLoad, 0.0, 8);
  const StaticResult r = solve_static(m, {1.0, 0.0});
  EXPECT_NEAR(r.nodal_moment[m.support_nodes[1]], -0.1 * kLoad * L * L, 1e-6);
  EXPECT_NEAR(r.max_abs_moment, 0.1 * kLoad * L * L, 1e-6);
  EXPECT_NEAR(r.reactions[0], 0.4 * kLoad * L, 1e-6);
  EXPECT_NEAR(r.reactions[1], 1.1 * kLoad * L, 1e-6);
}

TEST(Beam, LoadCombinationScalesLinearly) {
  const BeamModel m = make_beam({18.0, 24.0}, kEI, kMass, 10.0, 5.0, 8);
  const StaticResult a = solve_static(m, {1.0, 0.0});
  const StaticResult b = solve_static(m, {0.0, 1.0});
  const StaticResult c = solve_static(m, {1.35, 1.5});
  EXPECT_NEAR(c.max_abs_deflection, 1.35 * a.max_abs_deflection + 1.5 * b.max_abs_deflection,
              1e-12);
  EXPECT_NEAR(c.total_load, 42.0 * (13.5 + 7.5), 1e-9);
}

TEST(Beam, RefinementConverges) {
  const BeamModel coarse = make_beam({25.0}, kEI, kMass, kLoad, 0.0, 2);
  const BeamModel fine = make_beam({25.0}, kEI, kMass, kLoad, 0.0, 32);
  EXPECT_NEAR(first_frequency(coarse), first_frequency(fine), 1e-2 * first_frequency(fine));
}

TEST(Beam, EigenNonConvergenceThrows) {
  const BeamModel m = make_beam({20.0, 20.0}, kEI, kMass, kLoad, 0.0, 8);
  EXPECT_THROW(first_frequency(m, {1e-30, 2}), SimulationError);
}

TEST(Beam, InvalidInputs) {
  EXPECT_THROW(make_beam({}, kEI, kMass, kLoad, 0.0, 8), std::invalid_argument);
  EXPECT_THROW(make_beam({10.0}, -1.0, kMass, kLoad, 0.0, 8), std::invalid_argument);
  EXPECT_THROW(make_beam({10.0}, kEI, kMass, kLoad, 0.0, 0), std::invalid_argument);
}

// End span of three equal spans: simply supported span with the support
// moment wL^2/10 applied at its inner end.
double three_span_max_deflection(double w, double L, double ei) {
  const double m = w * L * L / 10.0;
  double best = 0.0;
  for (int k = 0; k <= 200000; ++k) {
    const double x = L * k / 200000.0;
    const double d = w * x * (L * L * L - 2 * L * x * x + x * x * x) / (24 * ei) -
                     m * x * (L * L - x * x) / (6 * ei * L);
    best = std::max(best, d);
  }
  return best;
}

TEST(Evaluate, StraightThreeSpanBridgeOracle) {
  const auto& cfg = testing::default_config();
  DesignFeatures x;
  x.h_girder = 1.0;
  x.t_girder = 0.2;
  x.n_p = 2;
  x.h_p = 1.0;
  x.i = 0.0;
  x.w = 1.0;
  const PerformanceMetrics y = evaluate(x, cfg.site, cfg.loads);

  const CrossSection c = section_properties(x.h_girder, x.t_girder, 2.5);
  const double L = 20.0;
  const double dead = 25.0 * c.area;
  const double live = 4.0 * 2.5;
  const double ei = 33.0e6 * c.inertia;
  const double w_uls = 1.35 * dead + 1.5 * live;
  EXPECT_NEAR(y.uls_util, 0.1 * w_uls * L * L / (20.0e3 * c.section_modulus), 1e-6 * y.uls_util);

  const double delta = three_span_max_deflection(dead + live, L, ei);
  // Deflection is sampled at element ends and Gauss points only.
  EXPECT_NEAR(y.sls_util, delta / (L / 350.0), 1e-3 * y.sls_util);

  const double mass = dead * 1e3 / 9.81;
  const double f1 = std::numbers::pi / (2 * L * L) * std::sqrt(ei * 1e3 / mass);
  EXPECT_NEAR(y.f1, f1, 1e-2 * f1);

  const double cost = 800.0 * (c.area * 60.0 + 2 * x.h_p * x.h_p * (6.0 - x.h_girder));
  EXPECT_NEAR(y.cost, cost, 1e-9 * cost);
  EXPECT_TRUE(y.clearance_ok);
  EXPECT_TRUE(y.trees_ok);
}

TEST(Evaluate, StifferGirderIsSaferAndDearer) {
  const auto& cfg = testing::default_config();
  DesignFeatures a = testing::nominal_design();
  DesignFeatures b = a;
  b.h_girder = 2.0;
  const auto ya = evaluate(a, cfg.site, cfg.loads);
  const auto yb = evaluate(b, cfg.site, cfg.loads);
  EXPECT_LT(yb.uls_util, ya.uls_util);
  EXPECT_LT(yb.sls_util, ya.sls_util);
  EXPECT_GT(yb.f1, ya.f1);
}

TEST(Evaluate, FailuresAreReportedNotThrown) {
  const auto& cfg = testing::default_config();
  DesignFeatures x = testing::nominal_design();
  x.h_girder = NAN;
  const EvaluationOutcome out = try_evaluate(x, cfg.site, cfg.loads);
  EXPECT_FALSE(out.metrics.has_value());
  EXPECT_FALSE(out.failure.empty());
  EXPECT_THROW(evaluate(x, cfg.site, cfg.loads), std::invalid_argument);
}

TEST(Metrics, ArrayRoundTrip) {
  PerformanceMetrics y{0.5, 0.2, 3.0, 5e4, true, false};
  EXPECT_EQ(PerformanceMetrics::from_array(y.as_array()), y);
}

TEST(LoadModel, Validation) {
  LoadModel l;
  EXPECT_NO_THROW(l.validate());
  l.sigma_allow = 0.0;
  EXPECT_THROW(l.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace bridge
