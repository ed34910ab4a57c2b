#include "bridge/simulator.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace bridge {
namespace {

constexpr double kGravity = 9.81;

using Mat4 = Eigen::Matrix4d;
using Vec4 = Eigen::Vector4d;

Mat4 element_stiffness(double ei, double l) {
  const double l2 = l * l;
  Mat4 k;
  k << 12.0, 6.0 * l, -12.0, 6.0 * l,
       6.0 * l, 4.0 * l2, -6.0 * l, 2.0 * l2,
       -12.0, -6.0 * l, 12.0, -6.0 * l,
       6.0 * l, 2.0 * l2, -6.0 * l, 4.0 * l2;
  return k * (ei / (l2 * l));
}

Mat4 element_mass(double mass, double l) {
  const double l2 = l * l;
  Mat4 m;
  m << 156.0, 22.0 * l, 54.0, -13.0 * l,
       22.0 * l, 4.0 * l2, 13.0 * l, -3.0 * l2,
       54.0, 13.0 * l, 156.0, -22.0 * l,
       -13.0 * l, -3.0 * l2, -22.0 * l, 4.0 * l2;
  return m * (mass * l / 420.0);
}

// Consistent nodal loads for a uniform downward line load.
Vec4 element_load(double w, double l) {
  return Vec4(0.5 * w * l, w * l * l / 12.0, 0.5 * w * l, -w * l * l / 12.0);
}

struct Assembly {
  Eigen::MatrixXd global;
  std::vector<Eigen::Index> free_dofs;
};

// Free DOFs: all rotations plus deflections at unsupported nodes.
std::vector<Eigen::Index> free_dofs(const BeamModel& model) {
  std::vector<bool> pinned(model.nodes.size(), false);
  for (std::size_t n : model.support_nodes) pinned[n] = true;
  std::vector<Eigen::Index> dofs;
  for (std::size_t n = 0; n < model.nodes.size(); ++n) {
    if (!pinned[n]) dofs.push_back(static_cast<Eigen::Index>(2 * n));
    dofs.push_back(static_cast<Eigen::Index>(2 * n + 1));
  }
  return dofs;
}

template <typename ElementFn>
Eigen::MatrixXd assemble(const BeamModel& model, ElementFn&& element) {
  const auto ndof = static_cast<Eigen::Index>(model.dof_count());
  Eigen::MatrixXd global = Eigen::MatrixXd::Zero(ndof, ndof);
  for (std::size_t e = 0; e < model.element_count(); ++e) {
    const Mat4 ke = element(model.nodes[e + 1] - model.nodes[e]);
    const auto base = static_cast<Eigen::Index>(2 * e);
    global.block<4, 4>(base, base) += ke;
  }
  return global;
}

Eigen::MatrixXd reduce(const Eigen::MatrixXd& full, const std::vector<Eigen::Index>& dofs) {
  const auto n = static_cast<Eigen::Index>(dofs.size());
  Eigen::MatrixXd r(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) r(a, b) = full(dofs[a], dofs[b]);
  }
  return r;
}

// Gauss-Legendre abscissae on [0,1].
constexpr std::array<double, 3> kGauss{0.5 - 0.3872983346207417, 0.5, 0.5 + 0.3872983346207417};

}  // namespace

void LoadModel::validate() const {
  for (double v : {concrete_unit_weight, live_load_area, uls_factors.dead, uls_factors.live,
                   sls_factors.dead, sls_factors.live, deflection_limit_ratio, sigma_allow,
                   e_modulus, unit_cost}) {
    if (!(std::isfinite(v) && v > 0.0)) {
      throw std::invalid_argument("load model values must be finite and > 0");
    }
  }
}

std::array<double, kMetricDims> PerformanceMetrics::as_array() const {
  return {uls_util, sls_util, f1, cost, clearance_ok ? 1.0 : 0.0, trees_ok ? 1.0 : 0.0};
}

PerformanceMetrics PerformanceMetrics::from_array(const std::array<double, kMetricDims>& v) {
  PerformanceMetrics y;
  y.uls_util = v[0];
  y.sls_util = v[1];
  y.f1 = v[2];
  y.cost = v[3];
  y.clearance_ok = v[4] >= 0.5;
  y.trees_ok = v[5] >= 0.5;
  return y;
}

BeamModel make_beam(const std::vector<double>& span_lengths, double flexural_rigidity,
                    double mass_per_length, double dead_line, double live_line,
                    std::size_t elems_per_span) {
  if (elems_per_span < 2) throw std::invalid_argument("elems_per_span must be >= 2");
  if (span_lengths.empty()) throw std::invalid_argument("beam needs at least one span");
  if (!(flexural_rigidity > 0.0)) throw std::invalid_argument("flexural rigidity must be > 0");
  for (double l : span_lengths) {
    if (!(std::isfinite(l) && l > 0.0)) throw std::invalid_argument("span lengths must be > 0");
  }

  BeamModel m;
  m.elems_per_span = elems_per_span;
  m.flexural_rigidity = flexural_rigidity;
  m.mass_per_length = mass_per_length;
  m.dead_line = dead_line;
  m.live_line = live_line;
  m.span_bounds.push_back(0.0);
  m.nodes.push_back(0.0);
  m.support_nodes.push_back(0);
  double start = 0.0;
  for (double l : span_lengths) {
    for (std::size_t k = 1; k <= elems_per_span; ++k) {
      m.nodes.push_back(k == elems_per_span
                            ? start + l
                            : start + l * static_cast<double>(k) / static_cast<double>(elems_per_span));
    }
    start += l;
    m.span_bounds.push_back(start);
    m.support_nodes.push_back(m.nodes.size() - 1);
  }
  return m;
}

BeamModel assemble_beam(const BridgeGeometry& geom, const LoadModel& loads,
                        std::size_t elems_per_span) {
  std::vector<double> spans;
  double prev = 0.0;
  for (double s : geom.pier_stations) {
    spans.push_back(s - prev);
    prev = s;
  }
  spans.push_back(geom.arc_length - prev);

  const double ei = loads.e_modulus * 1e6 * geom.section.inertia;  // kN*m^2
  const double dead = loads.concrete_unit_weight * geom.section.area;
  const double live = loads.live_load_area * geom.section.b;
  const double mass = dead / kGravity * 1e3;
  return make_beam(spans, ei, mass, dead, live, elems_per_span);
}

StaticResult solve_static(const BeamModel& model, LoadFactors combo) {
  const double w = combo.dead * model.dead_line + combo.live * model.live_line;
  const double ei = model.flexural_rigidity;
  const auto ndof = static_cast<Eigen::Index>(model.dof_count());

  const Eigen::MatrixXd k_full =
      assemble(model, [ei](double l) { return element_stiffness(ei, l); });
  Eigen::VectorXd f_full = Eigen::VectorXd::Zero(ndof);
  for (std::size_t e = 0; e < model.element_count(); ++e) {
    f_full.segment<4>(static_cast<Eigen::Index>(2 * e)) +=
        element_load(w, model.nodes[e + 1] - model.nodes[e]);
  }

  const auto dofs = free_dofs(model);
  const Eigen::MatrixXd k_red = reduce(k_full, dofs);
  Eigen::VectorXd f_red(static_cast<Eigen::Index>(dofs.size()));
  for (std::size_t a = 0; a < dofs.size(); ++a) f_red(static_cast<Eigen::Index>(a)) = f_full(dofs[a]);

  const Eigen::LLT<Eigen::MatrixXd> llt(k_red);
  if (llt.info() != Eigen::Success) throw SimulationError("singular beam stiffness matrix");
  const Eigen::VectorXd u_red = llt.solve(f_red);
  if (!u_red.allFinite()) throw SimulationError("non-finite static solution");

  Eigen::VectorXd u = Eigen::VectorXd::Zero(ndof);
  for (std::size_t a = 0; a < dofs.size(); ++a) u(dofs[a]) = u_red(static_cast<Eigen::Index>(a));

  StaticResult res;
  res.total_load = w * model.length();
  const Eigen::VectorXd r = k_full * u - f_full;
  for (std::size_t n : model.support_nodes) {
    res.reactions.push_back(-r(static_cast<Eigen::Index>(2 * n)));
  }

  res.span_max_moment.assign(model.span_count(), 0.0);
  res.span_max_deflection.assign(model.span_count(), 0.0);
  res.nodal_moment.assign(model.nodes.size(), 0.0);

  for (std::size_t e = 0; e < model.element_count(); ++e) {
    const double l = model.nodes[e + 1] - model.nodes[e];
    const auto base = static_cast<Eigen::Index>(2 * e);
    const Vec4 ue = u.segment<4>(base);
    const Vec4 fe = element_stiffness(ei, l) * ue - element_load(w, l);
    const std::size_t span = e / model.elems_per_span;

    // Sagging-positive moment along the element from its end forces.
    auto moment = [&](double x) { return fe(1) - fe(0) * x - 0.5 * w * x * x; };
    // Hermite interpolation plus the fixed-end bubble is exact under uniform load.
    auto deflection = [&](double xi) {
      const double xi2 = xi * xi;
      const double xi3 = xi2 * xi;
      const double hermite = (1.0 - 3.0 * xi2 + 2.0 * xi3) * ue(0) +
                             l * (xi - 2.0 * xi2 + xi3) * ue(1) +
                             (3.0 * xi2 - 2.0 * xi3) * ue(2) + l * (xi3 - xi2) * ue(3);
      const double x = xi * l;
      return hermite + w * x * x * (l - x) * (l - x) / (24.0 * ei);
    };

    res.nodal_moment[e] = moment(0.0);
    res.nodal_moment[e + 1] = moment(l);
    for (double xi : {0.0, kGauss[0], kGauss[1], kGauss[2], 1.0}) {
      const double m = std::abs(moment(xi * l));
      const double d = std::abs(deflection(xi));
      res.span_max_moment[span] = std::max(res.span_max_moment[span], m);
      res.span_max_deflection[span] = std::max(res.span_max_deflection[span], d);
    }
  }
  for (std::size_t s = 0; s < model.span_count(); ++s) {
    res.max_abs_moment = std::max(res.max_abs_moment, res.span_max_moment[s]);
    res.max_abs_deflection = std::max(res.max_abs_deflection, res.span_max_deflection[s]);
  }
  return res;
}

double first_frequency(const BeamModel& model, EigenOptions opts) {
  if (!(model.mass_per_length > 0.0)) throw std::invalid_argument("mass per length must be > 0");
  const double ei_newton = model.flexural_rigidity * 1e3;
  const double mass = model.mass_per_length;
  const auto dofs = free_dofs(model);
  const Eigen::MatrixXd k = reduce(
      assemble(model, [ei_newton](double l) { return element_stiffness(ei_newton, l); }), dofs);
  const Eigen::MatrixXd m =
      reduce(assemble(model, [mass](double l) { return element_mass(mass, l); }), dofs);

  const Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success) throw SimulationError("singular beam stiffness matrix");

  // A fixed pseudo-random start has a component along every mode, including
  // antisymmetric ones that a uniform start would miss.
  std::mt19937_64 rng(0x5eed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Eigen::VectorXd v(k.rows());
  for (Eigen::Index a = 0; a < v.size(); ++a) v(a) = unit(rng);
  v /= std::sqrt(v.dot(m * v));

  double lambda = v.dot(k * v);
  for (std::size_t it = 0; it < opts.max_iterations; ++it) {
    Eigen::VectorXd next = llt.solve(m * v);
    next /= std::sqrt(next.dot(m * next));
    const double updated = next.dot(k * next);
    v = std::move(next);
    if (!std::isfinite(updated)) throw SimulationError("eigen iteration diverged");
    if (std::abs(updated - lambda) <= opts.tolerance * std::abs(updated)) {
      return std::sqrt(updated) / (2.0 * std::numbers::pi);
    }
    lambda = updated;
  }
  throw SimulationError("eigen iteration did not converge");
}

PerformanceMetrics evaluate(const DesignFeatures& x, const SiteConfig& site,
                            const LoadModel& loads) {
  const BridgeGeometry geom = build_geometry(x, site);
  const BeamModel model = assemble_beam(geom, loads);

  const StaticResult uls = solve_static(model, loads.uls_factors);
  const StaticResult sls = solve_static(model, loads.sls_factors);

  PerformanceMetrics y;
  const double resistance = loads.sigma_allow * 1e3 * geom.section.section_modulus;  // kNm
  y.uls_util = uls.max_abs_moment / resistance;
  for (std::size_t s = 0; s < model.span_count(); ++s) {
    const double span = model.span_bounds[s + 1] - model.span_bounds[s];
    y.sls_util = std::max(y.sls_util, sls.span_max_deflection[s] /
                                          (span / loads.deflection_limit_ratio));
  }
  y.f1 = first_frequency(model);
  y.cost = loads.unit_cost * (geom.girder_volume + geom.pier_volume);
  const Compliance c = check_compliance(geom, x, site);
  y.clearance_ok = c.clearance_ok;
  y.trees_ok = c.trees_ok;
  return y;
}

EvaluationOutcome try_evaluate(const DesignFeatures& x, const SiteConfig& site,
                               const LoadModel& loads) noexcept {
  EvaluationOutcome out;
  try {
    out.metrics = evaluate(x, site, loads);
    for (double v : out.metrics->as_array()) {
      if (!std::isfinite(v)) {
        out.metrics.reset();
        out.failure = "non-finite performance metric";
        break;
      }
    }
  } catch (const std::exception& e) {
    out.metrics.reset();
    out.failure = e.what();
  }
  return out;
}

}  // namespace bridge
