#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "deskavoid/geometry.hpp"

namespace deskavoid {

using nlohmann::json;

namespace detail {

inline Rgb rgb_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw ValidationError(what + " must be an [r,g,b] triple");
  Rgb c{j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
  for (double v : {c.r, c.g, c.b}) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(what + " components must lie in [0,1]");
  }
  return c;
}

inline json rgb_to_json(const Rgb& c) { return json::array({c.r, c.g, c.b}); }

}  // namespace detail

inline Scene scene_from_json(const json& j) {
  try {
    const auto& b = j.at("bounds");
    if (!b.is_array() || b.size() != 4) throw ValidationError("bounds must be [xmin,ymin,xmax,ymax]");
    Bounds bounds{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
    std::vector<ConvexObstacle> obstacles;
    const auto& list = j.at("obstacles");
    for (std::size_t i = 0; i < list.size(); ++i) {
      const auto& o = list[i];
      std::vector<Vec2> verts;
      for (const auto& v : o.at("vertices")) {
        if (!v.is_array() || v.size() != 2) {
          throw ValidationError("obstacle " + std::to_string(i) + ": vertices must be [x,y] pairs");
        }
        verts.push_back({v[0].get<double>(), v[1].get<double>()});
      }
      if (auto err = ConvexObstacle::convexity_error(verts)) {
        throw ValidationError("obstacle " + std::to_string(i) + ": " + *err);
      }
      const std::string tag = "obstacle " + std::to_string(i) + " albedo";
      obstacles.emplace_back(std::move(verts), detail::rgb_from_json(o.at("albedo"), tag),
                             o.at("height").get<double>());
    }
    return Scene(bounds, std::move(obstacles), detail::rgb_from_json(j.at("wall_albedo"), "wall_albedo"),
                 detail::rgb_from_json(j.at("floor_albedo"), "floor_albedo"), j.at("max_range").get<double>());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed scene: ") + e.what());
  }
}

inline json scene_to_json(const Scene& s) {
  json obstacles = json::array();
  for (const auto& o : s.obstacles()) {
    json verts = json::array();
    for (const auto& v : o.vertices()) verts.push_back({v.x, v.y});
    obstacles.push_back({{"vertices", verts}, {"albedo", detail::rgb_to_json(o.albedo())}, {"height", o.height()}});
  }
  const auto& b = s.bounds();
  return {{"bounds", {b.xmin, b.ymin, b.xmax, b.ymax}},
          {"max_range", s.max_range()},
          {"wall_albedo", detail::rgb_to_json(s.wall_albedo())},
          {"floor_albedo", detail::rgb_to_json(s.floor_albedo())},
          {"obstacles", obstacles}};
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path + ": invalid JSON: " + e.what());
  }
}

inline Scene load_scene(const std::string& path) {
  try {
    return scene_from_json(read_json_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

/// Monte Carlo estimate of the fraction of the bounds not covered by obstacles.
inline double free_space_fraction(const Scene& scene, std::size_t samples, Rng& rng) {
  const auto& b = scene.bounds();
  std::size_t free = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const Vec2 p{uniform(rng, b.xmin, b.xmax), uniform(rng, b.ymin, b.ymax)};
    bool covered = false;
    for (const auto& o : scene.obstacles()) {
      if (o.contains(p)) {
        covered = true;
        break;
      }
    }
    if (!covered) ++free;
  }
  return samples ? static_cast<double>(free) / static_cast<double>(samples) : 1.0;
}

}  // namespace deskavoid
