#pragma once

#include <cmath>
#include <limits>
#include <utility>

#include "deskavoid/geometry.hpp"
#include "deskavoid/image.hpp"

namespace deskavoid {

/// Planar robot pose plus the camera pitch perturbation used only for rendering.
struct Pose {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
  double pitch = 0.0;

  [[nodiscard]] Vec2 position() const { return {x, y}; }
  friend bool operator==(const Pose&, const Pose&) = default;
};

/// Pinhole camera mounted at the robot center. Positive pitch tilts the view upward.
struct CameraModel {
  int width = 64;
  int height = 64;
  double horizontal_fov = kPi / 2.0;
  double mount_height = 0.5;
  double base_pitch_offset = -0.1;

  void validate() const {
    if (width < 8 || height < 8) throw ValidationError("camera resolution must be at least 8x8");
    if (!(horizontal_fov > 0.0 && horizontal_fov < kPi)) {
      throw ValidationError("camera horizontal_fov must lie in (0, pi)");
    }
    if (!(mount_height > 0.0)) throw ValidationError("camera mount_height must be positive");
  }

  /// Tangent of the pixel ray angle for a column. Edge columns sit exactly at +-fov/2 and the
  /// middle column of an odd-width image looks straight ahead. Positive = left of the optical axis.
  [[nodiscard]] double column_tangent(int col) const {
    const double s = 1.0 - 2.0 * col / static_cast<double>(width - 1);
    return s * std::tan(horizontal_fov / 2.0);
  }
  /// Same for rows with square pixels. Positive = above the optical axis.
  [[nodiscard]] double row_tangent(int row) const {
    const double pixel = 2.0 * std::tan(horizontal_fov / 2.0) / static_cast<double>(width - 1);
    return (0.5 * (height - 1) - row) * pixel;
  }
};

inline constexpr Rgb kSkyColor{0.55, 0.75, 0.95};
inline constexpr float kMinDepth = 1e-4f;

/// Distance shading: albedo / (1 + d / max_range).
inline Rgb shaded(const Rgb& albedo, double distance, double max_range) {
  const double f = 1.0 / (1.0 + distance / max_range);
  return {albedo.r * f, albedo.g * f, albedo.b * f};
}

struct Frame {
  Image rgb;
  Image depth;
};

/// 2.5D render: one horizontal ray per column; each row decides between floor, the extruded
/// faces along that ray, and sky from its elevation angle. Walls are unbounded in height.
inline Frame render_frame(const Scene& scene, const Pose& pose, const CameraModel& camera) {
  camera.validate();
  if (!scene.bounds().contains(pose.position())) {
    throw ValidationError("cannot render from outside the scene bounds");
  }
  const double range = scene.max_range();
  const double pitch = camera.base_pitch_offset + pose.pitch;
  const double cp = std::cos(pitch);
  const double sp = std::sin(pitch);
  const double h = camera.mount_height;

  Frame frame{Image(camera.width, camera.height, 3), Image(camera.width, camera.height, 1)};
  for (int col = 0; col < camera.width; ++col) {
    const double u = camera.column_tangent(col);
    const double azimuth = pose.yaw + std::atan(u);
    const Vec2 dir{std::cos(azimuth), std::sin(azimuth)};
    const auto hits = scene.raycast_all(pose.position(), dir);

    for (int row = 0; row < camera.height; ++row) {
      const double v = camera.row_tangent(row);
      const double fwd = cp - v * sp;
      const double up = sp + v * cp;
      const double elevation = std::atan2(up, std::hypot(fwd, u));
      const double tan_e = std::tan(elevation);
      const double cos_e = std::cos(elevation);
      const double floor_s =
          tan_e < 0.0 ? h / -tan_e : std::numeric_limits<double>::infinity();

      double horizontal = std::numeric_limits<double>::infinity();
      Rgb albedo = kSkyColor;
      bool hit = false;
      for (const RayHit& rh : hits) {
        if (floor_s <= rh.distance) break;
        const double z = h + rh.distance * tan_e;
        const double top = rh.surface.kind == Surface::Kind::wall
                               ? std::numeric_limits<double>::infinity()
                               : scene.obstacles()[rh.surface.obstacle].height();
        if (z <= top) {
          horizontal = rh.distance;
          albedo = rh.surface.kind == Surface::Kind::wall ? scene.wall_albedo()
                                                          : scene.obstacles()[rh.surface.obstacle].albedo();
          hit = true;
          break;
        }
      }
      if (!hit && std::isfinite(floor_s)) {
        horizontal = floor_s;
        albedo = scene.floor_albedo();
        hit = true;
      }
      double depth = hit ? horizontal / cos_e : range;
      if (depth >= range) {
        depth = range;
        albedo = kSkyColor;
        hit = false;
      }
      depth = std::max(depth, static_cast<double>(kMinDepth));
      const Rgb color = hit ? shaded(albedo, depth, range) : kSkyColor;
      frame.depth.at(row, col) = static_cast<float>(depth);
      frame.rgb.at(row, col, 0) = static_cast<float>(color.r);
      frame.rgb.at(row, col, 1) = static_cast<float>(color.g);
      frame.rgb.at(row, col, 2) = static_cast<float>(color.b);
    }
  }
  return frame;
}

/// Per-pixel Euclidean hit distance in meters, max_range where nothing is hit.
inline Image render_depth(const Scene& scene, const Pose& pose, const CameraModel& camera) {
  return render_frame(scene, pose, camera).depth;
}

/// Albedo of the hit surface shaded by 1/(1 + d/max_range); sky color where nothing is hit.
inline Image render_rgb(const Scene& scene, const Pose& pose, const CameraModel& camera) {
  return render_frame(scene, pose, camera).rgb;
}

/// Maps depth to [0,1] on a log scale between d_min and d_max.
inline Image log_depth_transform(const Image& depth, double d_min, double d_max) {
  if (!(d_min > 0.0 && d_min < d_max)) throw ValidationError("log-depth needs 0 < d_min < d_max");
  const double lo = std::log(d_min);
  const double span = std::log(d_max) - lo;
  Image out = depth;
  for (float& d : out.data) {
    const double c = std::clamp(static_cast<double>(d), d_min, d_max);
    d = static_cast<float>((std::log(c) - lo) / span);
  }
  return out;
}

/// Inverse of log_depth_transform on [0,1].
inline Image inverse_log_depth(const Image& t, double d_min, double d_max) {
  const double lo = std::log(d_min);
  const double span = std::log(d_max) - lo;
  Image out = t;
  for (float& v : out.data) v = static_cast<float>(std::exp(lo + static_cast<double>(v) * span));
  return out;
}

}  // namespace deskavoid
