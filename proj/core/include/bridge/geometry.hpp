#pragma once

// Parametric girder-bridge model: plan alignment, box-girder section, piers,
// volumes and site compliance.

#include <array>
#include <cstddef>
#include <string_view>
#include <vector>

namespace bridge {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

struct Tree {
  double x = 0.0;
  double y = 0.0;
  double radius = 0.0;
};

/// Fixed project boundary conditions. Lengths in metres, plan coordinates in
/// the site datum. `street_corridor` is an interval along the SP->EP chord.
struct SiteConfig {
  Point2 sp;
  Point2 ep;
  double deck_elevation = 0.0;
  double ground_elevation = 0.0;
  std::array<double, 2> street_corridor{0.0, 0.0};
  double required_clearance = 0.0;
  std::vector<Tree> trees;
  double width_b = 2.5;

  double chord_length() const;
  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;
};

inline constexpr std::size_t kDesignDims = 6;
inline constexpr int kMinPiers = 2;
inline constexpr int kMaxPiers = 8;
inline constexpr int kPierClasses = kMaxPiers - kMinPiers + 1;

inline constexpr std::array<std::string_view, kDesignDims> kDesignNames{
    "h_girder", "t_girder", "n_p", "h_p", "i", "w"};

/// x = [h_girder, t_girder, n_p, h_p, i, w]
struct DesignFeatures {
  double h_girder = 0.0;
  double t_girder = 0.0;
  int n_p = kMinPiers;
  double h_p = 0.0;
  double i = 0.0;
  double w = 1.0;

  std::array<double, kDesignDims> as_array() const;
  static DesignFeatures from_array(const std::array<double, kDesignDims>& v);
  bool operator==(const DesignFeatures&) const = default;
};

struct DesignSpace {
  std::array<double, kDesignDims> min{0.25, 0.1, 2, 0.5, 0.0, 0.01};
  std::array<double, kDesignDims> max{2.5, 0.23, 8, 1.5, 4.0, 7.00};
  std::size_t sample_count = 4000;

  void validate() const;
  bool contains(const DesignFeatures& x) const;
  /// Clamps every feature into bounds; returns true when anything moved.
  bool clip(DesignFeatures& x) const;
};

struct CrossSection {
  double b = 0.0;
  double h = 0.0;
  double t = 0.0;
  double area = 0.0;
  double inertia = 0.0;
  double section_modulus = 0.0;
  bool is_solid = false;
};

struct BridgeGeometry {
  double arc_length = 0.0;
  std::vector<double> pier_stations;
  double pier_height = 0.0;
  double pier_side = 0.0;
  double girder_volume = 0.0;
  double pier_volume = 0.0;
  CrossSection section;
  double offset_i = 0.0;
  double weight_w = 1.0;
  /// Plan centreline sampled at uniform curve parameter, with cumulative
  /// arc length per vertex.
  std::vector<Point2> centerline;
  std::vector<double> cumulative;

  /// Plan point at developed arc-length position `s` (linear along the polyline).
  Point2 point_at(double s) const;
};

struct Compliance {
  bool clearance_ok = false;
  bool trees_ok = false;
};

inline constexpr std::size_t kPolylineSamples = 1024;

/// Rational quadratic Bezier through SP and EP. The control point sits at the
/// chord midpoint shifted by `i` along the left chord normal, with weight `w`.
Point2 eval_alignment(double i, double w, double t, const SiteConfig& site);

std::vector<Point2> alignment_polyline(double i, double w, const SiteConfig& site,
                                       std::size_t samples = kPolylineSamples);

double arc_length(double i, double w, const SiteConfig& site,
                  std::size_t samples = kPolylineSamples);

CrossSection section_properties(double h, double t, double b);

/// Interior pier stations at equal spacing; abutments at 0 and L are implicit.
std::vector<double> pier_stations(int n_p, double length);

Compliance check_compliance(const BridgeGeometry& geom, const DesignFeatures& x,
                            const SiteConfig& site);

BridgeGeometry build_geometry(const DesignFeatures& x, const SiteConfig& site);

/// Left and right deck edges offset by +-b/2 from a centreline polyline.
std::array<std::vector<Point2>, 2> deck_edges(const std::vector<Point2>& centerline,
                                              double width);

}  // namespace bridge
