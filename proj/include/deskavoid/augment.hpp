#pragma once

#include <array>
#include <cmath>

#include "deskavoid/common.hpp"
#include "deskavoid/image.hpp"

namespace deskavoid {

/// Concrete photometric perturbation applied to one RGB frame.
struct AugmentParams {
  double brightness_shift = 0.0;
  double contrast_scale = 1.0;
  double hue_shift = 0.0;  // turns
  double saturation_scale = 1.0;
  double noise_sigma = 0.0;
};

/// Ranges the per-frame AugmentParams are drawn from.
struct AugmentRanges {
  double brightness = 0.2;
  double contrast_min = 0.8;
  double contrast_max = 1.25;
  double hue = 0.1;
  double saturation_min = 0.7;
  double saturation_max = 1.3;
  double noise_sigma_max = 0.05;
  bool enabled = true;

  [[nodiscard]] AugmentParams sample(Rng& rng) const {
    if (!enabled) return {};
    return {uniform(rng, -brightness, brightness), uniform(rng, contrast_min, contrast_max),
            uniform(rng, -hue, hue), uniform(rng, saturation_min, saturation_max),
            uniform(rng, 0.0, noise_sigma_max)};
  }
};

namespace detail {

inline std::array<double, 3> rgb_to_hsv(double r, double g, double b) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double delta = mx - mn;
  double hue = 0.0;
  if (delta > 0.0) {
    if (mx == r) {
      hue = std::fmod((g - b) / delta, 6.0);
    } else if (mx == g) {
      hue = (b - r) / delta + 2.0;
    } else {
      hue = (r - g) / delta + 4.0;
    }
    hue /= 6.0;
    if (hue < 0.0) hue += 1.0;
  }
  const double sat = mx > 0.0 ? delta / mx : 0.0;
  return {hue, sat, mx};
}

inline std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  const double m = v - c;
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  return {r + m, g + m, b + m};
}

inline float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace detail

/// Brightness shift, contrast about 0.5, hue/saturation in HSV, then Gaussian pixel noise.
/// Stages with identity parameters are skipped so identity params return the input unchanged.
inline Image augment(const Image& image, const AugmentParams& p, Rng& rng) {
  if (image.channels != 3) throw ValidationError("augment expects an RGB image");
  Image out = image;
  if (p.brightness_shift != 0.0) {
    for (float& v : out.data) v = detail::clamp01(v + p.brightness_shift);
  }
  if (p.contrast_scale != 1.0) {
    for (float& v : out.data) v = detail::clamp01((v - 0.5) * p.contrast_scale + 0.5);
  }
  if (p.hue_shift != 0.0 || p.saturation_scale != 1.0) {
    for (std::size_t i = 0; i < out.pixels(); ++i) {
      float* px = &out.data[i * 3];
      auto [h, s, v] = detail::rgb_to_hsv(px[0], px[1], px[2]);
      h += p.hue_shift;
      s = std::clamp(s * p.saturation_scale, 0.0, 1.0);
      const auto rgb = detail::hsv_to_rgb(h, s, v);
      for (int c = 0; c < 3; ++c) px[c] = detail::clamp01(rgb[c]);
    }
  }
  if (p.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, p.noise_sigma);
    for (float& v : out.data) v = detail::clamp01(v + noise(rng));
  }
  return out;
}

}  // namespace deskavoid
