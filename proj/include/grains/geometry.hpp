#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

namespace grains {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  bool operator==(const Vec2&) const = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

inline Vec2 rotate(Vec2 v, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

// Maps any angle into (-pi, pi].
inline double normalize_angle(double a) {
  double r = std::remainder(a, kTwoPi);
  if (r <= -kPi) r += kTwoPi;
  return r;
}

// Smallest absolute difference between two angles.
inline double angle_distance(double a, double b) {
  return std::abs(normalize_angle(a - b));
}

// Labeled-box geometry: footprint in the top-view plane plus vertical extent.
struct OBB {
  double center_x = 0.0;
  double center_y = 0.0;
  double elevation = 0.0;  // bottom face height
  double size_x = 1.0;
  double size_y = 1.0;
  double size_z = 1.0;
  double angle = 0.0;  // rotation of local axes, (-pi, pi]

  Vec2 center() const { return {center_x, center_y}; }
  double top() const { return elevation + size_z; }
  double footprint_area() const { return size_x * size_y; }

  Vec2 axis_x() const { return {std::cos(angle), std::sin(angle)}; }
  Vec2 axis_y() const { return {-std::sin(angle), std::cos(angle)}; }

  Vec2 to_local(Vec2 p) const { return rotate(p - center(), -angle); }
  Vec2 to_world(Vec2 p) const { return rotate(p, angle) + center(); }

  // Counter-clockwise footprint corners in the room frame.
  std::array<Vec2, 4> corners() const {
    const double hx = 0.5 * size_x, hy = 0.5 * size_y;
    return {to_world({-hx, -hy}), to_world({hx, -hy}), to_world({hx, hy}),
            to_world({-hx, hy})};
  }

  bool valid() const {
    return std::isfinite(center_x) && std::isfinite(center_y) &&
           std::isfinite(elevation) && std::isfinite(angle) && size_x > 0 &&
           size_y > 0 && size_z > 0 && angle > -kPi && angle <= kPi;
  }

  bool operator==(const OBB&) const = default;
};

// Planar rigid motion: p -> R(angle) p + translation.
struct Pose2 {
  Vec2 translation;
  double angle = 0.0;

  Vec2 apply(Vec2 p) const { return rotate(p, angle) + translation; }

  Pose2 compose(const Pose2& inner) const {
    return {apply(inner.translation), normalize_angle(angle + inner.angle)};
  }

  Pose2 inverse() const {
    return {rotate(translation * -1.0, -angle), normalize_angle(-angle)};
  }

  OBB apply(const OBB& b) const {
    OBB out = b;
    const Vec2 c = apply(b.center());
    out.center_x = c.x;
    out.center_y = c.y;
    out.angle = normalize_angle(b.angle + angle);
    return out;
  }
};

inline Pose2 pose_of(const OBB& b) { return {b.center(), b.angle}; }

inline double polygon_area(const std::vector<Vec2>& poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    a += cross(poly[i], poly[(i + 1) % poly.size()]);
  }
  return 0.5 * std::abs(a);
}

// Sutherland-Hodgman clipping of `subject` by convex counter-clockwise `clip`.
inline std::vector<Vec2> clip_convex(std::vector<Vec2> subject,
                                     const std::vector<Vec2>& clip) {
  for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const Vec2 a = clip[e], b = clip[(e + 1) % clip.size()];
    auto inside = [&](Vec2 p) { return cross(b - a, p - a) >= 0.0; };
    std::vector<Vec2> out;
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const Vec2 p = subject[i], q = subject[(i + 1) % subject.size()];
      const bool pin = inside(p), qin = inside(q);
      if (pin) out.push_back(p);
      if (pin != qin) {
        const Vec2 d = q - p;
        const double denom = cross(b - a, d);
        if (denom != 0.0) {
          const double t = cross(b - a, a - p) / denom;
          out.push_back(p + d * t);
        }
      }
    }
    subject = std::move(out);
  }
  return subject;
}

inline double footprint_intersection(const OBB& a, const OBB& b) {
  const auto ca = a.corners(), cb = b.corners();
  std::vector<Vec2> pa(ca.begin(), ca.end()), pb(cb.begin(), cb.end());
  const auto clipped = clip_convex(pa, pb);
  return clipped.size() < 3 ? 0.0 : polygon_area(clipped);
}

// Distance from point p to the footprint of b (0 when inside).
inline double distance_to_footprint(const OBB& b, Vec2 p) {
  const Vec2 l = b.to_local(p);
  const double dx = std::max(std::abs(l.x) - 0.5 * b.size_x, 0.0);
  const double dy = std::max(std::abs(l.y) - 0.5 * b.size_y, 0.0);
  return std::hypot(dx, dy);
}

// Axis-aligned bounds in a given frame.
struct Bounds2 {
  double min_x = INFINITY, min_y = INFINITY;
  double max_x = -INFINITY, max_y = -INFINITY;

  void add(Vec2 p) {
    min_x = std::min(min_x, p.x);
    min_y = std::min(min_y, p.y);
    max_x = std::max(max_x, p.x);
    max_y = std::max(max_y, p.y);
  }
  Vec2 center() const { return {0.5 * (min_x + max_x), 0.5 * (min_y + max_y)}; }
  double width() const { return max_x - min_x; }
  double height() const { return max_y - min_y; }
};

}  // namespace grains
