#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace efuse {

/// RGB image with values in [0, 1], stored row-major with interleaved channels.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  static constexpr std::size_t kChannels = 3;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w * kChannels, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * kChannels + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * kChannels + c]; }

  friend bool operator==(const Image&, const Image&) = default;
};

double mean_squared_error(const Image& a, const Image& b);

/// Raw image file: "FIMG", H, W (LE u32), then H*W*3 LE doubles.
void save_fimg(const Image& img, const std::string& path);
Image load_fimg(const std::string& path);

}  // namespace efuse
