#pragma once

// Planar geometry shared by every module: points, oriented rectangles,
// polygon predicates and convex clipping.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace coopdrive {

struct Vec2 {
  double x{0.0};
  double y{0.0};

  friend constexpr Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend constexpr Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend constexpr Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend constexpr Vec2 operator*(Vec2 a, double s) { return {s * a.x, s * a.y}; }
  friend constexpr bool operator==(Vec2, Vec2) = default;
};

inline constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline constexpr double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }
inline Vec2 unit_from_angle(double angle) { return {std::cos(angle), std::sin(angle)}; }

inline bool is_finite(Vec2 p) { return std::isfinite(p.x) && std::isfinite(p.y); }

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  if (a > -pi && a <= pi) return a;
  a = std::fmod(a + pi, 2.0 * pi);
  if (a <= 0.0) a += 2.0 * pi;
  return a - pi;
}

/// Closest point on segment [a, b] to p, as the clamped parameter in [0, 1].
inline double closest_param_on_segment(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = dot(ab, ab);
  if (len2 == 0.0) return 0.0;
  return std::clamp(dot(p - a, ab) / len2, 0.0, 1.0);
}

inline double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const double t = closest_param_on_segment(p, a, b);
  return distance(p, a + t * (b - a));
}

/// Rectangle with a center, heading of its long axis, and full side lengths.
struct OrientedRect {
  Vec2 center;
  double heading{0.0};
  double length{0.0};
  double width{0.0};

  /// Corners counter-clockwise starting at front-left.
  std::array<Vec2, 4> corners() const {
    const Vec2 f = unit_from_angle(heading);
    const Vec2 l{-f.y, f.x};
    const Vec2 hf = 0.5 * length * f;
    const Vec2 hl = 0.5 * width * l;
    return {center + hf + hl, center - hf + hl, center - hf - hl, center + hf - hl};
  }

  double circumradius() const { return 0.5 * std::hypot(length, width); }

  OrientedRect inflated(double margin) const {
    return {center, heading, length + 2.0 * margin, width + 2.0 * margin};
  }
};

inline double polygon_signed_area(std::span<const Vec2> poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    a += cross(poly[i], poly[(i + 1) % poly.size()]);
  }
  return 0.5 * a;
}

inline bool on_segment(Vec2 p, Vec2 a, Vec2 b, double eps = 1e-12) {
  return point_segment_distance(p, a, b) <= eps;
}

/// Point-in-polygon by ray crossing; points on the boundary count as inside.
inline bool point_in_polygon(Vec2 p, std::span<const Vec2> poly) {
  const std::size_t n = poly.size();
  if (n < 3) return false;
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2 a = poly[i];
    const Vec2 b = poly[j];
    if (on_segment(p, a, b)) return true;
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

namespace detail {

inline int orientation(Vec2 a, Vec2 b, Vec2 c) {
  const double v = cross(b - a, c - a);
  if (v > 0.0) return 1;
  if (v < 0.0) return -1;
  return 0;
}

inline bool within_box(Vec2 p, Vec2 a, Vec2 b) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

}  // namespace detail

inline bool segments_intersect(Vec2 p1, Vec2 p2, Vec2 q1, Vec2 q2) {
  using detail::orientation;
  const int o1 = orientation(p1, p2, q1);
  const int o2 = orientation(p1, p2, q2);
  const int o3 = orientation(q1, q2, p1);
  const int o4 = orientation(q1, q2, p2);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && detail::within_box(q1, p1, p2)) return true;
  if (o2 == 0 && detail::within_box(q2, p1, p2)) return true;
  if (o3 == 0 && detail::within_box(p1, q1, q2)) return true;
  if (o4 == 0 && detail::within_box(p2, q1, q2)) return true;
  return false;
}

/// True when no two non-adjacent edges touch and no vertex repeats.
inline bool polygon_is_simple(std::span<const Vec2> poly) {
  const std::size_t n = poly.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (poly[i] == poly[j]) return false;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = (j == i + 1) || (i == 0 && j == n - 1);
      if (adjacent) continue;
      if (segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n])) return false;
    }
  }
  return std::abs(polygon_signed_area(poly)) > 0.0;
}

/// Separating-axis test for two oriented rectangles; touching counts as overlap.
inline bool rects_overlap(const OrientedRect& a, const OrientedRect& b) {
  const double reach = a.circumradius() + b.circumradius();
  const Vec2 d = b.center - a.center;
  if (dot(d, d) > reach * reach) return false;
  const auto ca = a.corners();
  const auto cb = b.corners();
  const std::array<Vec2, 4> axes{unit_from_angle(a.heading), unit_from_angle(a.heading + std::numbers::pi / 2),
                                 unit_from_angle(b.heading), unit_from_angle(b.heading + std::numbers::pi / 2)};
  for (const Vec2 axis : axes) {
    double amin = dot(ca[0], axis), amax = amin;
    double bmin = dot(cb[0], axis), bmax = bmin;
    for (int k = 1; k < 4; ++k) {
      const double pa = dot(ca[k], axis);
      const double pb = dot(cb[k], axis);
      amin = std::min(amin, pa);
      amax = std::max(amax, pa);
      bmin = std::min(bmin, pb);
      bmax = std::max(bmax, pb);
    }
    if (amax < bmin || bmax < amin) return false;
  }
  return true;
}

/// Sutherland-Hodgman clip of a convex subject polygon by a convex
/// counter-clockwise clip polygon.
inline std::vector<Vec2> clip_convex(std::vector<Vec2> subject, std::span<const Vec2> clip) {
  for (std::size_t i = 0; i < clip.size() && !subject.empty(); ++i) {
    const Vec2 a = clip[i];
    const Vec2 b = clip[(i + 1) % clip.size()];
    std::vector<Vec2> out;
    out.reserve(subject.size() + 2);
    for (std::size_t k = 0; k < subject.size(); ++k) {
      const Vec2 p = subject[k];
      const Vec2 q = subject[(k + 1) % subject.size()];
      const double sp = cross(b - a, p - a);
      const double sq = cross(b - a, q - a);
      if (sp >= 0.0) out.push_back(p);
      if ((sp >= 0.0) != (sq >= 0.0)) {
        const double t = sp / (sp - sq);
        out.push_back(p + t * (q - p));
      }
    }
    subject = std::move(out);
  }
  return subject;
}

inline double rect_area(const OrientedRect& r) { return r.length * r.width; }

inline double rect_intersection_area(const OrientedRect& a, const OrientedRect& b) {
  const double reach = a.circumradius() + b.circumradius();
  const Vec2 d = b.center - a.center;
  if (dot(d, d) > reach * reach) return 0.0;
  const auto ca = a.corners();
  const auto cb = b.corners();
  const auto poly = clip_convex(std::vector<Vec2>(ca.begin(), ca.end()), cb);
  if (poly.size() < 3) return 0.0;
  return std::max(0.0, polygon_signed_area(poly));
}

inline bool point_in_rect(Vec2 p, const OrientedRect& r) {
  const Vec2 f = unit_from_angle(r.heading);
  const Vec2 l{-f.y, f.x};
  const Vec2 d = p - r.center;
  return std::abs(dot(d, f)) <= 0.5 * r.length && std::abs(dot(d, l)) <= 0.5 * r.width;
}

}  // namespace coopdrive
