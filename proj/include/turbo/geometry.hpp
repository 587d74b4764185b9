// SPDX-License-Identifier: Apache-2.0
//
// Blade geometry kernel: section profiles from the 7-parameter section law,
// bend/sweep transforms, spanwise stacking, validation and export.
#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "turbo/common.hpp"

namespace turbo::geometry {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

/// One design section. Angles in degrees (measured from the axial direction),
/// lengths in meters, thickness quantities relative to chord.
struct SectionParams {
  double beta1k = 0.0;  ///< leading-edge metal angle
  double beta2k = 0.0;  ///< trailing-edge metal angle
  double chord = 0.0;
  double t_max = 0.0;   ///< maximum thickness / chord
  double t_pos = 0.0;   ///< chordwise position of t_max, (0, 1)
  double bend = 0.0;    ///< translation along the chord normal
  double sweep = 0.0;   ///< translation along the chord

  static constexpr std::size_t kCount = 7;

  std::array<double, kCount> to_array() const {
    return {beta1k, beta2k, chord, t_max, t_pos, bend, sweep};
  }
  static SectionParams from_array(std::span<const double, kCount> a) {
    return {a[0], a[1], a[2], a[3], a[4], a[5], a[6]};
  }
  bool operator==(const SectionParams&) const = default;
};

/// Throws Error(InvalidParams) if the section invariants do not hold.
void validate_params(const SectionParams& p);

/// The 21-variable design: hub (span 0), mid (span 0.5), tip (span 1).
struct BladeParamVector {
  SectionParams hub;
  SectionParams mid;
  SectionParams tip;

  /// Order: hub beta1k..sweep, mid beta1k..sweep, tip beta1k..sweep.
  DesignArray flatten() const;
  static BladeParamVector unflatten(const DesignArray& x);
  bool operator==(const BladeParamVector&) const = default;
};

/// Column name of design variable i, e.g. "mid_t_pos".
std::string_view param_name(std::size_t i);

struct ClosedProfile2D {
  std::vector<Point2> points;    ///< counterclockwise, first == last
  Point2 centroid;
  std::vector<double> thickness; ///< per-station thickness (m), empty for hand-built profiles
  bool operator==(const ClosedProfile2D&) const = default;
};

// Section law --------------------------------------------------------------

/// Point on the cubic Bezier camber line at parameter s in [0, 1]. Starts at
/// the origin; the chord vector has length `chord` at the stagger angle
/// (beta1k + beta2k) / 2.
Point2 camber_point(const SectionParams& p, double s);
/// Unit tangent of the camber line at s.
Point2 camber_tangent(const SectionParams& p, double s);

/// Unit chord direction and its left normal.
Point2 chord_direction(const SectionParams& p);
Point2 chord_normal(const SectionParams& p);

/// Thickness NURBS (degree 3, 5 control points, unit weights) evaluated at
/// curve parameter xi in [0, 1]: returns (chord fraction u, half thickness / chord).
/// The apex at xi = 0.5 sits exactly on (t_pos, t_max / 2).
Point2 thickness_point(const SectionParams& p, double xi);
std::array<Point2, 5> thickness_control_points(const SectionParams& p);

/// Sampled camber station: where the thickness is laid off.
struct Station {
  double chord_fraction = 0.0;
  Point2 camber;
  Point2 normal;
  double thickness = 0.0;  ///< full thickness in meters
};
std::vector<Station> section_stations(const SectionParams& p, std::size_t count);

// Profiles and blades ------------------------------------------------------

inline constexpr std::size_t kDefaultProfilePoints = 129;

ClosedProfile2D build_section_profile(const SectionParams& p,
                                      std::size_t n_points = kDefaultProfilePoints);

/// Rigid translation by bend along the chord normal and sweep along the chord.
ClosedProfile2D apply_bend_sweep(const ClosedProfile2D& profile, const SectionParams& p);

ClosedProfile2D translate(const ClosedProfile2D& profile, Point2 offset);

/// Shoelace area (positive for counterclockwise) and centroid.
double signed_area(std::span<const Point2> pts);
Point2 polygon_centroid(std::span<const Point2> pts);

/// Quadratic (Lagrange) interpolation of every section parameter through the
/// three control sections.
SectionParams interpolate_section(const BladeParamVector& v, double span);

/// Control section as stacked in the blade: centroid moved to the stacking
/// axis, then bent/swept.
ClosedProfile2D control_section(const SectionParams& p,
                                std::size_t n_points = kDefaultProfilePoints);

struct StackingLayout {
  double hub_radius = 0.15;
  double tip_radius = 0.25;
};

struct BladeSection {
  double span = 0.0;
  double radius = 0.0;
  SectionParams params;
  ClosedProfile2D profile;
  bool operator==(const BladeSection&) const = default;
};

struct BladeSurface {
  std::vector<BladeSection> sections;
  std::size_t n_span() const { return sections.size(); }
  bool operator==(const BladeSurface&) const = default;
};

BladeSurface assemble_blade(const BladeParamVector& v, std::size_t n_span,
                            std::size_t n_points = kDefaultProfilePoints,
                            const StackingLayout& layout = {});

// Validation ---------------------------------------------------------------

struct Violation {
  std::size_t section = 0;
  std::string check;
  double measured = 0.0;
};

struct GeometryReport {
  bool valid = true;
  std::vector<Violation> violations;
};

/// Checks closure, non-self-intersection, positive area and thickness.
std::vector<Violation> check_profile(const ClosedProfile2D& profile, std::size_t section = 0);
bool has_self_intersection(std::span<const Point2> closed_points);
GeometryReport validate_geometry(const BladeSurface& b);

// Export -------------------------------------------------------------------

enum class ExportFormat { MeshJson, Obj };
ExportFormat parse_export_format(std::string_view name);

std::string export_geometry(const BladeSurface& b, ExportFormat format);

struct MeshGrid {
  std::size_t n_span = 0;
  std::size_t n_points = 0;
  std::vector<double> spans;
  std::vector<std::array<double, 3>> grid;  ///< row-major n_span x n_points
};

MeshGrid mesh_grid(const BladeSurface& b);
MeshGrid parse_mesh_json(std::string_view text);

}  // namespace turbo::geometry
