#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "deskavoid/common.hpp"

namespace deskavoid {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend Vec2 operator*(Vec2 a, double s) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2, Vec2) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

struct Rgb {
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Distance from p to the closed segment [a, b].
inline double segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = dot(ab, ab);
  double t = len2 > 0.0 ? dot(p - a, ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return norm(p - (a + t * ab));
}

/// Strictly convex, counter-clockwise polygon extruded to `height` for rendering.
class ConvexObstacle {
 public:
  ConvexObstacle(std::vector<Vec2> vertices, Rgb albedo, double height)
      : vertices_(std::move(vertices)), albedo_(albedo), height_(height) {
    if (auto err = convexity_error(vertices_)) throw ValidationError(*err);
    if (!(height_ > 0.0)) throw ValidationError("obstacle height must be positive");
  }

  /// Describes why `v` is not a strictly convex CCW polygon, naming the offending vertex.
  static std::optional<std::string> convexity_error(const std::vector<Vec2>& v) {
    if (v.size() < 3) {
      return "polygon needs at least 3 vertices, got " + std::to_string(v.size());
    }
    const std::size_t n = v.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2 prev = v[(i + n - 1) % n];
      const Vec2 cur = v[i];
      const Vec2 next = v[(i + 1) % n];
      if (!(cross(cur - prev, next - cur) > 0.0)) {
        return "polygon is not strictly convex counter-clockwise at vertex " + std::to_string(i);
      }
    }
    // A star polygon can turn left at every vertex; its winding exceeds one turn.
    double turning = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2 e0 = v[(i + n - 1) % n] - v[(i + n - 2) % n];
      const Vec2 e1 = v[i] - v[(i + n - 1) % n];
      turning += std::atan2(cross(e0, e1), dot(e0, e1));
    }
    if (std::abs(turning - 2.0 * kPi) > 1e-6) {
      return "polygon winds more than once (self-intersecting) at vertex 0";
    }
    return std::nullopt;
  }

  [[nodiscard]] const std::vector<Vec2>& vertices() const { return vertices_; }
  [[nodiscard]] const Rgb& albedo() const { return albedo_; }
  [[nodiscard]] double height() const { return height_; }

  /// Positive outside, negative inside (penetration depth), zero on the boundary.
  [[nodiscard]] double signed_distance(Vec2 p) const {
    const std::size_t n = vertices_.size();
    double edge_dist = std::numeric_limits<double>::infinity();
    bool inside = true;
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2 a = vertices_[i];
      const Vec2 b = vertices_[(i + 1) % n];
      edge_dist = std::min(edge_dist, segment_distance(p, a, b));
      if (cross(b - a, p - a) < 0.0) inside = false;
    }
    return inside ? -edge_dist : edge_dist;
  }

  [[nodiscard]] bool contains(Vec2 p) const { return signed_distance(p) < 0.0; }

 private:
  std::vector<Vec2> vertices_;
  Rgb albedo_;
  double height_;
};

inline double signed_distance(Vec2 p, const ConvexObstacle& obstacle) {
  return obstacle.signed_distance(p);
}

struct Bounds {
  double xmin = 0.0;
  double ymin = 0.0;
  double xmax = 0.0;
  double ymax = 0.0;

  [[nodiscard]] double width() const { return xmax - xmin; }
  [[nodiscard]] double height() const { return ymax - ymin; }
  [[nodiscard]] bool contains(Vec2 p) const {
    return p.x >= xmin && p.x <= xmax && p.y >= ymin && p.y <= ymax;
  }
  /// Corners in CCW order starting at (xmin, ymin).
  [[nodiscard]] std::array<Vec2, 4> corners() const {
    return {Vec2{xmin, ymin}, Vec2{xmax, ymin}, Vec2{xmax, ymax}, Vec2{xmin, ymax}};
  }
};

struct Disc {
  Vec2 center;
  double radius = 0.0;
};

/// Which surface a ray hit. `obstacle` is meaningful only for Kind::obstacle.
struct Surface {
  enum class Kind { none, wall, obstacle };
  Kind kind = Kind::none;
  std::size_t obstacle = 0;
  friend bool operator==(const Surface&, const Surface&) = default;
};

struct RayHit {
  double distance = 0.0;
  Surface surface;
};

namespace detail {

/// Ray parameter t >= 0 where origin + t*dir crosses segment [a, b], if any.
inline std::optional<double> ray_segment(Vec2 origin, Vec2 dir, Vec2 a, Vec2 b) {
  const Vec2 e = b - a;
  const double denom = cross(dir, e);
  if (std::abs(denom) < 1e-15) return std::nullopt;  // parallel
  const Vec2 ao = a - origin;
  const double t = cross(ao, e) / denom;
  const double s = cross(ao, dir) / denom;
  if (t < 0.0 || s < 0.0 || s > 1.0) return std::nullopt;
  return t;
}

}  // namespace detail

/// Immutable world: convex obstacles inside a walled rectangle.
class Scene {
 public:
  Scene(Bounds bounds, std::vector<ConvexObstacle> obstacles, Rgb wall_albedo, Rgb floor_albedo,
        double max_range)
      : bounds_(bounds),
        obstacles_(std::move(obstacles)),
        wall_albedo_(wall_albedo),
        floor_albedo_(floor_albedo),
        max_range_(max_range) {
    if (!(bounds_.width() > 0.0 && bounds_.height() > 0.0)) {
      throw ValidationError("scene bounds must have positive area");
    }
    if (!(max_range_ > 0.0)) throw ValidationError("max_range must be positive");
    for (std::size_t i = 0; i < obstacles_.size(); ++i) {
      for (const Vec2& v : obstacles_[i].vertices()) {
        if (!bounds_.contains(v)) {
          throw ValidationError("obstacle " + std::to_string(i) + " extends outside scene bounds");
        }
      }
    }
  }

  [[nodiscard]] const Bounds& bounds() const { return bounds_; }
  [[nodiscard]] const std::vector<ConvexObstacle>& obstacles() const { return obstacles_; }
  [[nodiscard]] const Rgb& wall_albedo() const { return wall_albedo_; }
  [[nodiscard]] const Rgb& floor_albedo() const { return floor_albedo_; }
  [[nodiscard]] double max_range() const { return max_range_; }

  /// Signed distance to the bounds walls: positive inside the room.
  [[nodiscard]] double wall_distance(Vec2 p) const {
    return std::min({p.x - bounds_.xmin, bounds_.xmax - p.x, p.y - bounds_.ymin, bounds_.ymax - p.y});
  }

  /// Smallest signed distance from `p` to any obstacle or wall.
  [[nodiscard]] double distance(Vec2 p) const {
    double d = wall_distance(p);
    for (const auto& o : obstacles_) d = std::min(d, o.signed_distance(p));
    return d;
  }

  /// Footprint clearance; negative when the disc overlaps something.
  [[nodiscard]] double min_clearance(const Disc& footprint) const {
    return distance(footprint.center) - footprint.radius;
  }

  /// Nearest hit along a unit direction, or {max_range, none}.
  [[nodiscard]] RayHit raycast(Vec2 origin, Vec2 direction) const {
    RayHit best{max_range_, {}};
    for (std::size_t i = 0; i < obstacles_.size(); ++i) {
      if (obstacles_[i].contains(origin)) return {0.0, {Surface::Kind::obstacle, i}};
    }
    const auto consider = [&](Vec2 a, Vec2 b, Surface s) {
      if (auto t = detail::ray_segment(origin, direction, a, b); t && *t < best.distance) {
        best = {*t, s};
      }
    };
    const auto c = bounds_.corners();
    for (std::size_t k = 0; k < 4; ++k) consider(c[k], c[(k + 1) % 4], {Surface::Kind::wall, 0});
    for (std::size_t i = 0; i < obstacles_.size(); ++i) {
      const auto& v = obstacles_[i].vertices();
      for (std::size_t k = 0; k < v.size(); ++k) {
        consider(v[k], v[(k + 1) % v.size()], {Surface::Kind::obstacle, i});
      }
    }
    return best;
  }

  /// Every surface entered along the ray before max_range, nearest first.
  /// Each obstacle contributes its entry point only; walls end the list.
  [[nodiscard]] std::vector<RayHit> raycast_all(Vec2 origin, Vec2 direction) const {
    std::vector<RayHit> hits;
    RayHit wall{max_range_, {}};
    const auto c = bounds_.corners();
    for (std::size_t k = 0; k < 4; ++k) {
      if (auto t = detail::ray_segment(origin, direction, c[k], c[(k + 1) % 4]); t && *t < wall.distance) {
        wall = {*t, {Surface::Kind::wall, 0}};
      }
    }
    for (std::size_t i = 0; i < obstacles_.size(); ++i) {
      const auto& o = obstacles_[i];
      if (o.contains(origin)) {
        hits.push_back({0.0, {Surface::Kind::obstacle, i}});
        continue;
      }
      double entry = std::numeric_limits<double>::infinity();
      const auto& v = o.vertices();
      for (std::size_t k = 0; k < v.size(); ++k) {
        if (auto t = detail::ray_segment(origin, direction, v[k], v[(k + 1) % v.size()])) {
          entry = std::min(entry, *t);
        }
      }
      if (entry < wall.distance) hits.push_back({entry, {Surface::Kind::obstacle, i}});
    }
    std::sort(hits.begin(), hits.end(),
              [](const RayHit& a, const RayHit& b) { return a.distance < b.distance; });
    if (wall.surface.kind != Surface::Kind::none) hits.push_back(wall);
    return hits;
  }

 private:
  Bounds bounds_;
  std::vector<ConvexObstacle> obstacles_;
  Rgb wall_albedo_;
  Rgb floor_albedo_;
  double max_range_;
};

inline double min_clearance(const Scene& scene, const Disc& footprint) {
  return scene.min_clearance(footprint);
}

inline RayHit raycast(const Scene& scene, Vec2 origin, Vec2 direction) {
  return scene.raycast(origin, direction);
}

}  // namespace deskavoid
