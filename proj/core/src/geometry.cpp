#include "bridge/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace bridge {
namespace {

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw std::invalid_argument(std::string("non-finite ") + what);
  }
}

double distance(Point2 a, Point2 b) { return std::hypot(b.x - a.x, b.y - a.y); }

double point_segment_distance(Point2 p, Point2 a, Point2 b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0.0) {
    t = std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / len2, 0.0, 1.0);
  }
  return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

}  // namespace

double SiteConfig::chord_length() const { return distance(sp, ep); }

void SiteConfig::validate() const {
  for (double v : {sp.x, sp.y, ep.x, ep.y, deck_elevation, ground_elevation,
                   street_corridor[0], street_corridor[1], required_clearance, width_b}) {
    require_finite(v, "site value");
  }
  const double chord = chord_length();
  if (!(chord > 0.0)) throw std::invalid_argument("site: sp and ep coincide");
  if (!(required_clearance > 0.0)) throw std::invalid_argument("site: required_clearance must be > 0");
  if (!(width_b > 0.0)) throw std::invalid_argument("site: width_b must be > 0");
  if (!(street_corridor[0] < street_corridor[1]) || street_corridor[0] < 0.0 ||
      street_corridor[1] > chord) {
    throw std::invalid_argument("site: street_corridor must be a non-empty subinterval of the chord");
  }
  for (const Tree& tree : trees) {
    require_finite(tree.x, "tree x");
    require_finite(tree.y, "tree y");
    if (!(tree.radius > 0.0)) throw std::invalid_argument("site: tree radius must be > 0");
  }
}

std::array<double, kDesignDims> DesignFeatures::as_array() const {
  return {h_girder, t_girder, static_cast<double>(n_p), h_p, i, w};
}

DesignFeatures DesignFeatures::from_array(const std::array<double, kDesignDims>& v) {
  DesignFeatures x;
  x.h_girder = v[0];
  x.t_girder = v[1];
  x.n_p = static_cast<int>(std::lround(v[2]));
  x.h_p = v[3];
  x.i = v[4];
  x.w = v[5];
  return x;
}

void DesignSpace::validate() const {
  for (std::size_t j = 0; j < kDesignDims; ++j) {
    require_finite(min[j], "design bound");
    require_finite(max[j], "design bound");
    if (!(min[j] < max[j])) {
      throw std::invalid_argument("design space: min must be < max for " +
                                  std::string(kDesignNames[j]));
    }
  }
  if (sample_count == 0) throw std::invalid_argument("design space: sample_count must be > 0");
}

bool DesignSpace::contains(const DesignFeatures& x) const {
  const auto v = x.as_array();
  for (std::size_t j = 0; j < kDesignDims; ++j) {
    if (!std::isfinite(v[j]) || v[j] < min[j] || v[j] > max[j]) return false;
  }
  return true;
}

bool DesignSpace::clip(DesignFeatures& x) const {
  auto v = x.as_array();
  bool moved = false;
  for (std::size_t j = 0; j < kDesignDims; ++j) {
    const double c = std::clamp(v[j], min[j], max[j]);
    if (c != v[j]) moved = true;
    v[j] = c;
  }
  x = DesignFeatures::from_array(v);
  return moved;
}

Point2 BridgeGeometry::point_at(double s) const {
  if (centerline.empty()) return {};
  if (s <= 0.0) return centerline.front();
  if (s >= cumulative.back()) return centerline.back();
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), s);
  const auto k = static_cast<std::size_t>(it - cumulative.begin());
  const double seg = cumulative[k] - cumulative[k - 1];
  const double a = seg > 0.0 ? (s - cumulative[k - 1]) / seg : 0.0;
  const Point2 p = centerline[k - 1];
  const Point2 q = centerline[k];
  return {p.x + a * (q.x - p.x), p.y + a * (q.y - p.y)};
}

Point2 eval_alignment(double i, double w, double t, const SiteConfig& site) {
  require_finite(i, "alignment offset i");
  require_finite(w, "alignment weight w");
  require_finite(t, "curve parameter t");
  if (!(w > 0.0)) throw std::invalid_argument("alignment weight w must be > 0");
  if (t < 0.0 || t > 1.0) throw std::invalid_argument("curve parameter t must lie in [0,1]");

  const double chord = site.chord_length();
  const double nx = -(site.ep.y - site.sp.y) / chord;
  const double ny = (site.ep.x - site.sp.x) / chord;
  const Point2 control{0.5 * (site.sp.x + site.ep.x) + i * nx,
                       0.5 * (site.sp.y + site.ep.y) + i * ny};

  const double b0 = (1.0 - t) * (1.0 - t);
  const double b1 = 2.0 * t * (1.0 - t) * w;
  const double b2 = t * t;
  const double denom = b0 + b1 + b2;
  return {(b0 * site.sp.x + b1 * control.x + b2 * site.ep.x) / denom,
          (b0 * site.sp.y + b1 * control.y + b2 * site.ep.y) / denom};
}

std::vector<Point2> alignment_polyline(double i, double w, const SiteConfig& site,
                                       std::size_t samples) {
  if (samples < 2) throw std::invalid_argument("polyline needs at least 2 samples");
  std::vector<Point2> pts;
  pts.reserve(samples);
  const double step = 1.0 / static_cast<double>(samples - 1);
  for (std::size_t k = 0; k < samples; ++k) {
    const double t = k + 1 == samples ? 1.0 : static_cast<double>(k) * step;
    pts.push_back(eval_alignment(i, w, t, site));
  }
  return pts;
}

double arc_length(double i, double w, const SiteConfig& site, std::size_t samples) {
  const auto pts = alignment_polyline(i, w, site, samples);
  double total = 0.0;
  for (std::size_t k = 1; k < pts.size(); ++k) total += distance(pts[k - 1], pts[k]);
  return total;
}

CrossSection section_properties(double h, double t, double b) {
  require_finite(h, "section height");
  require_finite(t, "section thickness");
  require_finite(b, "section width");
  if (!(h > 0.0 && t > 0.0 && b > 0.0)) {
    throw std::invalid_argument("section dimensions must be > 0");
  }
  CrossSection s;
  s.b = b;
  s.h = h;
  s.t = t;
  const double inner_h = h - 2.0 * t;
  const double inner_b = b - 2.0 * t;
  s.is_solid = inner_h <= 0.0 || inner_b <= 0.0;
  if (s.is_solid) {
    s.area = b * h;
    s.inertia = b * h * h * h / 12.0;
  } else {
    s.area = b * h - inner_b * inner_h;
    s.inertia = (b * h * h * h - inner_b * inner_h * inner_h * inner_h) / 12.0;
  }
  s.section_modulus = s.inertia / (0.5 * h);
  return s;
}

std::vector<double> pier_stations(int n_p, double length) {
  if (n_p < 1) throw std::invalid_argument("pier count must be >= 1");
  require_finite(length, "arc length");
  std::vector<double> stations;
  stations.reserve(static_cast<std::size_t>(n_p));
  for (int k = 1; k <= n_p; ++k) {
    stations.push_back(static_cast<double>(k) * length / static_cast<double>(n_p + 1));
  }
  return stations;
}

Compliance check_compliance(const BridgeGeometry& geom, const DesignFeatures& x,
                            const SiteConfig& site) {
  Compliance out;

  const double chord = site.chord_length();
  const double ux = (site.ep.x - site.sp.x) / chord;
  const double uy = (site.ep.y - site.sp.y) / chord;
  bool pier_in_corridor = false;
  for (double s : geom.pier_stations) {
    const Point2 p = geom.point_at(s);
    const double along = (p.x - site.sp.x) * ux + (p.y - site.sp.y) * uy;
    if (along >= site.street_corridor[0] && along <= site.street_corridor[1]) {
      pier_in_corridor = true;
      break;
    }
  }
  const double soffit = site.deck_elevation - x.h_girder;
  out.clearance_ok = soffit >= site.required_clearance && !pier_in_corridor;

  out.trees_ok = true;
  const double half = 0.5 * site.width_b;
  for (const Tree& tree : site.trees) {
    double nearest = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k < geom.centerline.size(); ++k) {
      nearest = std::min(nearest, point_segment_distance({tree.x, tree.y}, geom.centerline[k - 1],
                                                         geom.centerline[k]));
    }
    if (nearest < tree.radius + half) {
      out.trees_ok = false;
      break;
    }
  }
  return out;
}

BridgeGeometry build_geometry(const DesignFeatures& x, const SiteConfig& site) {
  for (double v : x.as_array()) require_finite(v, "design feature");
  if (x.n_p < 1) throw std::invalid_argument("pier count must be >= 1");
  if (!(x.h_p > 0.0)) throw std::invalid_argument("pier side h_p must be > 0");

  BridgeGeometry g;
  g.offset_i = x.i;
  g.weight_w = x.w;
  g.centerline = alignment_polyline(x.i, x.w, site);
  g.cumulative.resize(g.centerline.size());
  g.cumulative[0] = 0.0;
  for (std::size_t k = 1; k < g.centerline.size(); ++k) {
    g.cumulative[k] = g.cumulative[k - 1] + distance(g.centerline[k - 1], g.centerline[k]);
  }
  g.arc_length = g.cumulative.back();
  g.section = section_properties(x.h_girder, x.t_girder, site.width_b);
  g.pier_stations = pier_stations(x.n_p, g.arc_length);
  g.pier_side = x.h_p;
  g.pier_height = site.deck_elevation - x.h_girder - site.ground_elevation;
  if (g.pier_height < 0.0) {
    throw std::invalid_argument("girder depth exceeds deck height above ground");
  }
  g.girder_volume = g.section.area * g.arc_length;
  g.pier_volume = static_cast<double>(x.n_p) * x.h_p * x.h_p * g.pier_height;
  return g;
}

std::array<std::vector<Point2>, 2> deck_edges(const std::vector<Point2>& centerline,
                                              double width) {
  std::array<std::vector<Point2>, 2> edges;
  const std::size_t n = centerline.size();
  if (n < 2) return edges;
  const double half = 0.5 * width;
  for (std::size_t k = 0; k < n; ++k) {
    const Point2 a = centerline[k == 0 ? 0 : k - 1];
    const Point2 b = centerline[k + 1 == n ? k : k + 1];
    const double len = distance(a, b);
    const double nx = len > 0.0 ? -(b.y - a.y) / len : 0.0;
    const double ny = len > 0.0 ? (b.x - a.x) / len : 0.0;
    edges[0].push_back({centerline[k].x + half * nx, centerline[k].y + half * ny});
    edges[1].push_back({centerline[k].x - half * nx, centerline[k].y - half * ny});
  }
  return edges;
}

}  // namespace bridge
