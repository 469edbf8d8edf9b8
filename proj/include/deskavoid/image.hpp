#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "deskavoid/common.hpp"

namespace deskavoid {

/// Dense float raster, row-major with interleaved channels (index = (row*width + col)*channels + c).
/// One channel holds depth in meters or normalized log-depth; three channels hold RGB in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  [[nodiscard]] std::size_t index(int row, int col, int c = 0) const {
    return (static_cast<std::size_t>(row) * width + col) * channels + c;
  }
  float& at(int row, int col, int c = 0) { return data[index(row, col, c)]; }
  [[nodiscard]] float at(int row, int col, int c = 0) const { return data[index(row, col, c)]; }
  [[nodiscard]] std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Writes binary PGM (1 channel) or PPM (3 channels), maxval 255, linear over [lo, hi].
inline void write_pnm(const std::string& path, const Image& img, float lo = 0.0f, float hi = 1.0f) {
  if (img.channels != 1 && img.channels != 3) throw ValidationError("PNM export needs 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path);
  out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  std::vector<std::uint8_t> bytes(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const float t = std::clamp((img.data[i] - lo) / (hi - lo), 0.0f, 1.0f);
    bytes[i] = static_cast<std::uint8_t>(std::lround(t * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace deskavoid
