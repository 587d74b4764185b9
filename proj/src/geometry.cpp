// SPDX-License-Identifier: Apache-2.0
#include "turbo/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "json.hpp"

namespace turbo::geometry {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Clamped cubic knot vector with one interior knot.
constexpr std::array<double, 9> kThicknessKnots = {0, 0, 0, 0, 0.5, 1, 1, 1, 1};
constexpr int kThicknessDegree = 3;
// LE nose radius of the thickness law, relative to t_max * chord.
constexpr double kNoseRadiusFactor = 0.05;

Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
Point2 operator*(double s, Point2 a) { return {s * a.x, s * a.y}; }
double cross(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }
double norm(Point2 a) { return std::hypot(a.x, a.y); }

// Cox-de Boor basis N_{i,p}(xi) for the thickness knot vector.
double basis(int i, int p, double xi) {
  const auto& u = kThicknessKnots;
  if (p == 0) {
    if (xi >= u[i] && xi < u[i + 1]) return 1.0;
    // Close the last non-empty span at xi == 1.
    if (xi == u.back() && u[i + 1] == u.back() && u[i] < u[i + 1]) return 1.0;
    return 0.0;
  }
  double left = 0.0;
  double right = 0.0;
  const double dl = u[i + p] - u[i];
  const double dr = u[i + p + 1] - u[i + 1];
  if (dl > 0.0) left = (xi - u[i]) / dl * basis(i, p - 1, xi);
  if (dr > 0.0) right = (u[i + p + 1] - xi) / dr * basis(i + 1, p - 1, xi);
  return left + right;
}

std::array<Point2, 4> camber_controls(const SectionParams& p) {
  const double b1 = p.beta1k * kDeg;
  const double b2 = p.beta2k * kDeg;
  const Point2 c = chord_direction(p);
  const Point2 p0{0.0, 0.0};
  const Point2 p3 = p.chord * c;
  const double handle = p.chord / 3.0;
  const Point2 p1 = p0 + handle * Point2{std::cos(b1), std::sin(b1)};
  const Point2 p2 = p3 - handle * Point2{std::cos(b2), std::sin(b2)};
  return {p0, p1, p2, p3};
}

double cosine_spacing(std::size_t k, std::size_t m) {
  if (k == 0) return 0.0;
  if (k == m) return 1.0;
  return 0.5 * (1.0 - std::cos(std::numbers::pi * static_cast<double>(k) / static_cast<double>(m)));
}

bool finite_params(const SectionParams& p) {
  for (double v : p.to_array())
    if (!std::isfinite(v)) return false;
  return true;
}

int orientation(Point2 a, Point2 b, Point2 c) {
  const double o = cross(b - a, c - a);
  return (o > 0.0) - (o < 0.0);
}

bool on_segment(Point2 a, Point2 b, Point2 q) {
  return std::min(a.x, b.x) <= q.x && q.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= q.y &&
         q.y <= std::max(a.y, b.y);
}

bool segments_intersect(Point2 a, Point2 b, Point2 c, Point2 d) {
  if (std::max(a.x, b.x) < std::min(c.x, d.x) || std::max(c.x, d.x) < std::min(a.x, b.x) ||
      std::max(a.y, b.y) < std::min(c.y, d.y) || std::max(c.y, d.y) < std::min(a.y, b.y))
    return false;
  const int o1 = orientation(a, b, c);
  const int o2 = orientation(a, b, d);
  const int o3 = orientation(c, d, a);
  const int o4 = orientation(c, d, b);
  if (o1 != o2 && o3 != o4 && o1 != 0 && o2 != 0 && o3 != 0 && o4 != 0) return true;
  if (o1 == 0 && on_segment(a, b, c)) return true;
  if (o2 == 0 && on_segment(a, b, d)) return true;
  if (o3 == 0 && on_segment(c, d, a)) return true;
  if (o4 == 0 && on_segment(c, d, b)) return true;
  return false;
}

}  // namespace

void validate_params(const SectionParams& p) {
  if (!finite_params(p)) fail(ErrorCode::InvalidParams, "non-finite section parameter");
  if (!(p.chord > 0.0)) fail(ErrorCode::InvalidParams, "chord must be positive");
  if (!(p.t_max > 0.0 && p.t_max <= 0.25))
    fail(ErrorCode::InvalidParams, "t_max must lie in (0, 0.25]");
  if (!(p.t_pos > 0.0 && p.t_pos < 1.0)) fail(ErrorCode::InvalidParams, "t_pos must lie in (0, 1)");
}

DesignArray BladeParamVector::flatten() const {
  DesignArray out{};
  const std::array<const SectionParams*, 3> secs = {&hub, &mid, &tip};
  for (std::size_t s = 0; s < 3; ++s) {
    const auto a = secs[s]->to_array();
    std::copy(a.begin(), a.end(), out.begin() + static_cast<std::ptrdiff_t>(s * SectionParams::kCount));
  }
  return out;
}

BladeParamVector BladeParamVector::unflatten(const DesignArray& x) {
  const std::span<const double, kDesignDim> all(x);
  return {SectionParams::from_array(all.subspan<0, 7>()),
          SectionParams::from_array(all.subspan<7, 7>()),
          SectionParams::from_array(all.subspan<14, 7>())};
}

std::string_view param_name(std::size_t i) {
  static const std::array<std::string, kDesignDim> names = [] {
    std::array<std::string, kDesignDim> n;
    const std::array<const char*, 3> sec = {"hub", "mid", "tip"};
    const std::array<const char*, 7> par = {"beta1k", "beta2k", "chord", "t_max",
                                            "t_pos",  "bend",   "sweep"};
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t k = 0; k < 7; ++k) n[s * 7 + k] = std::string(sec[s]) + "_" + par[k];
    return n;
  }();
  if (i >= kDesignDim) fail(ErrorCode::InvalidArgument, "design index out of range");
  return names[i];
}

Point2 chord_direction(const SectionParams& p) {
  const double stagger = 0.5 * (p.beta1k + p.beta2k) * kDeg;
  return {std::cos(stagger), std::sin(stagger)};
}

Point2 chord_normal(const SectionParams& p) {
  const Point2 c = chord_direction(p);
  return {-c.y, c.x};
}

Point2 camber_point(const SectionParams& p, double s) {
  const auto cp = camber_controls(p);
  const double r = 1.0 - s;
  const double b0 = r * r * r;
  const double b1 = 3.0 * r * r * s;
  const double b2 = 3.0 * r * s * s;
  const double b3 = s * s * s;
  return {b0 * cp[0].x + b1 * cp[1].x + b2 * cp[2].x + b3 * cp[3].x,
          b0 * cp[0].y + b1 * cp[1].y + b2 * cp[2].y + b3 * cp[3].y};
}

Point2 camber_tangent(const SectionParams& p, double s) {
  const auto cp = camber_controls(p);
  const double r = 1.0 - s;
  const Point2 d = (3.0 * r * r) * (cp[1] - cp[0]) + (6.0 * r * s) * (cp[2] - cp[1]) +
                   (3.0 * s * s) * (cp[3] - cp[2]);
  const double n = norm(d);
  return {d.x / n, d.y / n};
}

std::array<Point2, 5> thickness_control_points(const SectionParams& p) {
  // Basis weight of the outer interior control points at the apex parameter.
  static const double alpha = basis(1, kThicknessDegree, 0.5);
  const double half = 0.5 * p.t_max;

  double x1 = 0.0;
  double x2 = 0.0;
  double x3 = 1.0;
  if (p.t_pos < alpha) {
    x3 = p.t_pos / alpha;
  } else if (p.t_pos > 1.0 - alpha) {
    x2 = 1.0;
    x1 = (p.t_pos - 1.0 + alpha) / alpha;
  } else {
    x2 = (p.t_pos - alpha) / (1.0 - 2.0 * alpha);
  }
  // End curvature radius of the curve is 3 H^2 / (x2 - x1); pick H for the
  // requested nose radius, capped so the height polygon stays unimodal.
  const double nose = kNoseRadiusFactor * p.t_max;
  const double lever = std::max(x2 - x1, 0.05);
  const double h = std::min(half, std::sqrt(nose * lever / 3.0));
  const double apex = (half - 2.0 * alpha * h) / (1.0 - 2.0 * alpha);
  return {Point2{0.0, 0.0}, Point2{x1, h}, Point2{x2, apex}, Point2{x3, h}, Point2{1.0, 0.0}};
}

Point2 thickness_point(const SectionParams& p, double xi) {
  const auto cp = thickness_control_points(p);
  if (xi <= 0.0) return cp.front();
  if (xi >= 1.0) return cp.back();
  Point2 out;
  double wsum = 0.0;
  for (int i = 0; i < 5; ++i) {
    const double b = basis(i, kThicknessDegree, xi);  // unit weights
    out = out + b * cp[static_cast<std::size_t>(i)];
    wsum += b;
  }
  return {out.x / wsum, out.y / wsum};
}

std::vector<Station> section_stations(const SectionParams& p, std::size_t count) {
  if (count < 2) fail(ErrorCode::InvalidArgument, "need at least two stations");
  std::vector<Station> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double xi = cosine_spacing(k, count - 1);
    const Point2 th = thickness_point(p, xi);
    const Point2 t = camber_tangent(p, th.x);
    out.push_back({th.x, camber_point(p, th.x), Point2{-t.y, t.x}, 2.0 * th.y * p.chord});
  }
  return out;
}

double signed_area(std::span<const Point2> pts) {
  if (pts.size() < 3) return 0.0;
  double a = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) a += cross(pts[i], pts[i + 1]);
  if (!(pts.front() == pts.back())) a += cross(pts.back(), pts.front());
  return 0.5 * a;
}

Point2 polygon_centroid(std::span<const Point2> pts) {
  double a = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  const std::size_t n = pts.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point2 p = pts[i];
    const Point2 q = pts[(i + 1) % n];
    const double c = cross(p, q);
    a += c;
    cx += (p.x + q.x) * c;
    cy += (p.y + q.y) * c;
  }
  a *= 0.5;
  if (a == 0.0) return {};
  return {cx / (6.0 * a), cy / (6.0 * a)};
}

ClosedProfile2D build_section_profile(const SectionParams& p, std::size_t n_points) {
  validate_params(p);
  if (n_points < 64) fail(ErrorCode::InvalidArgument, "profile needs at least 64 points");

  // lower: LE -> TE on m_lower+1 stations; upper: TE -> LE, TE excluded.
  const std::size_t m_upper = (n_points - 1) / 2;
  const std::size_t m_lower = n_points - 1 - m_upper;

  ClosedProfile2D prof;
  prof.points.reserve(n_points);
  prof.thickness.reserve(m_lower + 1);
  for (std::size_t k = 0; k <= m_lower; ++k) {
    const double xi = cosine_spacing(k, m_lower);
    const Point2 th = thickness_point(p, xi);
    const Point2 c = camber_point(p, th.x);
    const Point2 t = camber_tangent(p, th.x);
    const Point2 n{-t.y, t.x};
    const double half = th.y * p.chord;
    prof.points.push_back(c - half * n);
    prof.thickness.push_back(2.0 * half);
  }
  for (std::size_t j = m_upper; j-- > 1;) {
    const double xi = cosine_spacing(j, m_upper);
    const Point2 th = thickness_point(p, xi);
    const Point2 c = camber_point(p, th.x);
    const Point2 t = camber_tangent(p, th.x);
    const Point2 n{-t.y, t.x};
    prof.points.push_back(c + (th.y * p.chord) * n);
  }
  prof.points.push_back(prof.points.front());

  const double area = signed_area(prof.points);
  if (!(area > 0.0) || has_self_intersection(prof.points))
    fail(ErrorCode::DegenerateProfile, "thickness envelope self-intersects");
  prof.centroid = polygon_centroid(std::span<const Point2>(prof.points).first(prof.points.size() - 1));
  return prof;
}

ClosedProfile2D translate(const ClosedProfile2D& profile, Point2 offset) {
  ClosedProfile2D out = profile;
  for (auto& q : out.points) q = q + offset;
  out.centroid = out.centroid + offset;
  return out;
}

ClosedProfile2D apply_bend_sweep(const ClosedProfile2D& profile, const SectionParams& p) {
  const Point2 n = chord_normal(p);
  const Point2 c = chord_direction(p);
  return translate(profile, Point2{p.bend * n.x + p.sweep * c.x, p.bend * n.y + p.sweep * c.y});
}

SectionParams interpolate_section(const BladeParamVector& v, double span) {
  const double l0 = 2.0 * (span - 0.5) * (span - 1.0);
  const double l1 = -4.0 * span * (span - 1.0);
  const double l2 = 2.0 * span * (span - 0.5);
  const auto h = v.hub.to_array();
  const auto m = v.mid.to_array();
  const auto t = v.tip.to_array();
  std::array<double, SectionParams::kCount> out{};
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = l0 * h[k] + l1 * m[k] + l2 * t[k];
  return SectionParams::from_array(out);
}

ClosedProfile2D control_section(const SectionParams& p, std::size_t n_points) {
  const ClosedProfile2D raw = build_section_profile(p, n_points);
  return apply_bend_sweep(translate(raw, Point2{-raw.centroid.x, -raw.centroid.y}), p);
}

BladeSurface assemble_blade(const BladeParamVector& v, std::size_t n_span, std::size_t n_points,
                            const StackingLayout& layout) {
  if (n_span < 3) fail(ErrorCode::InvalidArgument, "n_span must be at least 3");
  // Stacking line: quadratic through the bent/swept control-section centroids.
  auto offset_of = [](const SectionParams& p) {
    const Point2 n = chord_normal(p);
    const Point2 c = chord_direction(p);
    return Point2{p.bend * n.x + p.sweep * c.x, p.bend * n.y + p.sweep * c.y};
  };
  const Point2 dh = offset_of(v.hub);
  const Point2 dm = offset_of(v.mid);
  const Point2 dt = offset_of(v.tip);

  BladeSurface blade;
  blade.sections.reserve(n_span);
  for (std::size_t k = 0; k < n_span; ++k) {
    const double s = static_cast<double>(k) / static_cast<double>(n_span - 1);
    const SectionParams p = interpolate_section(v, s);
    const ClosedProfile2D raw = build_section_profile(p, n_points);
    const ClosedProfile2D centered = translate(raw, Point2{-raw.centroid.x, -raw.centroid.y});
    const double l0 = 2.0 * (s - 0.5) * (s - 1.0);
    const double l1 = -4.0 * s * (s - 1.0);
    const double l2 = 2.0 * s * (s - 0.5);
    const Point2 offset{l0 * dh.x + l1 * dm.x + l2 * dt.x, l0 * dh.y + l1 * dm.y + l2 * dt.y};
    BladeSection sec;
    sec.span = s;
    sec.radius = layout.hub_radius + s * (layout.tip_radius - layout.hub_radius);
    sec.params = p;
    sec.profile = translate(centered, offset);
    blade.sections.push_back(std::move(sec));
  }
  return blade;
}

bool has_self_intersection(std::span<const Point2> closed_points) {
  // Zero-length segments are tolerated: drop consecutive duplicates first.
  std::vector<Point2> q;
  q.reserve(closed_points.size());
  for (const auto& p : closed_points)
    if (q.empty() || !(q.back() == p)) q.push_back(p);
  if (q.size() > 1 && q.front() == q.back()) q.pop_back();
  const std::size_t n = q.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const Point2 a = q[i];
    const Point2 b = q[(i + 1) % n];
    for (std::size_t j = i + 2; j < n; ++j) {
      if (i == 0 && j == n - 1) continue;  // adjacent through the closure
      if (segments_intersect(a, b, q[j], q[(j + 1) % n])) return true;
    }
  }
  return false;
}

std::vector<Violation> check_profile(const ClosedProfile2D& profile, std::size_t section) {
  std::vector<Violation> out;
  const auto& pts = profile.points;
  if (pts.size() < 4) {
    out.push_back({section, "point_count", static_cast<double>(pts.size())});
    return out;
  }
  if (!(pts.front() == pts.back()))
    out.push_back({section, "closure", norm(pts.front() - pts.back())});
  if (has_self_intersection(pts)) out.push_back({section, "self_intersection", 1.0});
  const double area = signed_area(pts);
  if (!(area > 0.0)) out.push_back({section, "area", area});
  if (profile.thickness.size() > 2) {
    const auto first = profile.thickness.begin() + 1;
    const auto last = profile.thickness.end() - 1;
    const double tmin = *std::min_element(first, last);
    if (!(tmin > 0.0)) out.push_back({section, "thickness", tmin});
  }
  return out;
}

GeometryReport validate_geometry(const BladeSurface& b) {
  GeometryReport rep;
  if (b.sections.size() < 3)
    rep.violations.push_back({0, "n_span", static_cast<double>(b.sections.size())});
  for (std::size_t k = 0; k < b.sections.size(); ++k) {
    if (k > 0 && !(b.sections[k].span > b.sections[k - 1].span))
      rep.violations.push_back({k, "span_order", b.sections[k].span});
    auto v = check_profile(b.sections[k].profile, k);
    rep.violations.insert(rep.violations.end(), v.begin(), v.end());
  }
  rep.valid = rep.violations.empty();
  return rep;
}

ExportFormat parse_export_format(std::string_view name) {
  if (name == "mesh-json" || name == "json") return ExportFormat::MeshJson;
  if (name == "obj") return ExportFormat::Obj;
  fail(ErrorCode::UnsupportedFormat, "unknown geometry format '" + std::string(name) + "'");
}

MeshGrid mesh_grid(const BladeSurface& b) {
  MeshGrid g;
  g.n_span = b.sections.size();
  g.n_points = g.n_span ? b.sections.front().profile.points.size() : 0;
  for (const auto& s : b.sections) {
    if (s.profile.points.size() != g.n_points)
      fail(ErrorCode::ShapeMismatch, "sections have different point counts");
    g.spans.push_back(s.span);
    for (const auto& p : s.profile.points) g.grid.push_back({p.x, p.y, s.radius});
  }
  return g;
}

std::string export_geometry(const BladeSurface& b, ExportFormat format) {
  const MeshGrid g = mesh_grid(b);
  if (format == ExportFormat::MeshJson) {
    nlohmann::ordered_json j;
    j["n_span"] = g.n_span;
    j["n_points"] = g.n_points;
    j["spans"] = g.spans;
    auto rows = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < g.n_span; ++k) {
      auto row = nlohmann::ordered_json::array();
      for (std::size_t i = 0; i < g.n_points; ++i) {
        const auto& p = g.grid[k * g.n_points + i];
        row.push_back({p[0], p[1], p[2]});
      }
      rows.push_back(std::move(row));
    }
    j["grid"] = std::move(rows);
    j["units"] = "m";
    return j.dump();
  }

  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "# blade surface: %zu sections x %zu points\n", g.n_span,
                g.n_points);
  out += buf;
  for (const auto& p : g.grid) {
    std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g\n", p[0], p[1], p[2]);
    out += buf;
  }
  // Profiles run counterclockwise in (x, y) with radius increasing with k.
  for (std::size_t k = 0; k + 1 < g.n_span; ++k) {
    for (std::size_t i = 0; i + 1 < g.n_points; ++i) {
      const std::size_t a = k * g.n_points + i + 1;  // 1-based
      const std::size_t b2 = a + 1;
      const std::size_t c = a + g.n_points + 1;
      const std::size_t d = a + g.n_points;
      std::snprintf(buf, sizeof buf, "f %zu %zu %zu\nf %zu %zu %zu\n", a, b2, c, a, c, d);
      out += buf;
    }
  }
  return out;
}

MeshGrid parse_mesh_json(std::string_view text) {
  MeshGrid g;
  try {
    const auto j = nlohmann::json::parse(text);
    g.n_span = j.at("n_span").get<std::size_t>();
    g.n_points = j.at("n_points").get<std::size_t>();
    g.spans = j.at("spans").get<std::vector<double>>();
    if (j.at("units").get<std::string>() != "m")
      fail(ErrorCode::InvalidArgument, "mesh-json units must be m");
    const auto& rows = j.at("grid");
    if (rows.size() != g.n_span || g.spans.size() != g.n_span)
      fail(ErrorCode::ShapeMismatch, "mesh-json grid does not match n_span");
    for (const auto& row : rows) {
      if (row.size() != g.n_points) fail(ErrorCode::ShapeMismatch, "mesh-json row length");
      for (const auto& p : row) g.grid.push_back(p.get<std::array<double, 3>>());
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("mesh-json: ") + e.what());
  }
  return g;
}

}  // namespace turbo::geometry
