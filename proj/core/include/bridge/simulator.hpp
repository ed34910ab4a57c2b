#pragma once

// Reference performance simulator: a continuous Euler-Bernoulli beam over the
// developed arc length, giving y = P(x).

#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bridge/geometry.hpp"

namespace bridge {

struct LoadFactors {
  double dead = 1.0;
  double live = 1.0;
};

/// Units: kN/m^3, kPa, MPa, GPa, CHF/m^3.
struct LoadModel {
  double concrete_unit_weight = 25.0;
  double live_load_area = 4.0;
  LoadFactors uls_factors{1.35, 1.5};
  LoadFactors sls_factors{1.0, 1.0};
  double deflection_limit_ratio = 350.0;
  double sigma_allow = 20.0;
  double e_modulus = 33.0;
  double unit_cost = 800.0;

  void validate() const;
};

/// Thrown for numerical failures of the reference simulator (singular
/// stiffness, eigen-solver non-convergence).
class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Straight beam, 2 DOF per node (deflection, rotation), pinned at every
/// support node. Stiffness in kN*m^2, line loads in kN/m, mass in kg/m.
struct BeamModel {
  std::vector<double> nodes;
  std::vector<std::size_t> support_nodes;
  std::vector<double> span_bounds;
  std::size_t elems_per_span = 0;
  double flexural_rigidity = 0.0;
  double mass_per_length = 0.0;
  double dead_line = 0.0;
  double live_line = 0.0;

  std::size_t element_count() const { return nodes.empty() ? 0 : nodes.size() - 1; }
  std::size_t dof_count() const { return 2 * nodes.size(); }
  std::size_t span_count() const { return span_bounds.empty() ? 0 : span_bounds.size() - 1; }
  double length() const { return nodes.empty() ? 0.0 : nodes.back() - nodes.front(); }
};

struct StaticResult {
  double max_abs_moment = 0.0;
  double max_abs_deflection = 0.0;
  std::vector<double> span_max_moment;
  std::vector<double> span_max_deflection;
  /// Nodal bending moments (sagging positive) and support reactions (upward).
  std::vector<double> nodal_moment;
  std::vector<double> reactions;
  double total_load = 0.0;
};

inline constexpr std::size_t kMetricDims = 6;
inline constexpr std::size_t kContinuousMetrics = 4;
inline constexpr std::array<std::string_view, kMetricDims> kMetricNames{
    "uls_util", "sls_util", "f1", "cost", "clearance_ok", "trees_ok"};

/// y = [uls_util, sls_util, f1, cost, clearance_ok, trees_ok]
struct PerformanceMetrics {
  double uls_util = 0.0;
  double sls_util = 0.0;
  double f1 = 0.0;
  double cost = 0.0;
  bool clearance_ok = false;
  bool trees_ok = false;

  std::array<double, kMetricDims> as_array() const;
  static PerformanceMetrics from_array(const std::array<double, kMetricDims>& v);
  bool operator==(const PerformanceMetrics&) const = default;
};

/// Generic continuous beam with equal properties in all spans.
BeamModel make_beam(const std::vector<double>& span_lengths, double flexural_rigidity,
                    double mass_per_length, double dead_line, double live_line,
                    std::size_t elems_per_span);

BeamModel assemble_beam(const BridgeGeometry& geom, const LoadModel& loads,
                        std::size_t elems_per_span = 8);

StaticResult solve_static(const BeamModel& model, LoadFactors combo);

struct EigenOptions {
  double tolerance = 1e-10;
  std::size_t max_iterations = 10000;
};

/// Smallest natural frequency in Hz, by inverse power iteration on (K, M).
double first_frequency(const BeamModel& model, EigenOptions opts = {});

PerformanceMetrics evaluate(const DesignFeatures& x, const SiteConfig& site,
                            const LoadModel& loads);

struct EvaluationOutcome {
  std::optional<PerformanceMetrics> metrics;
  std::string failure;
};

/// Like evaluate(), but simulator failures come back as a failure message
/// instead of an exception.
EvaluationOutcome try_evaluate(const DesignFeatures& x, const SiteConfig& site,
                               const LoadModel& loads) noexcept;

}  // namespace bridge
