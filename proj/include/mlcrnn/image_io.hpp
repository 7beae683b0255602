#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "mlcrnn/tensor.hpp"

namespace mlcrnn {

/// 8-bit interleaved raster with 1 or 3 channels.
struct Image8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> data;

  Image8() = default;
  Image8(std::size_t h, std::size_t w, std::size_t c, std::uint8_t fill = 0)
      : height(h), width(w), channels(c), data(h * w * c, fill) {}

  std::uint8_t& at(std::size_t r, std::size_t col, std::size_t ch) { return data[(r * width + col) * channels + ch]; }
  std::uint8_t at(std::size_t r, std::size_t col, std::size_t ch) const {
    return data[(r * width + col) * channels + ch];
  }
  friend bool operator==(const Image8&, const Image8&) = default;
};

/// Format follows the extension: .png, .pgm (gray) or .ppm (RGB).
/// PNG input is converted to 8-bit gray or RGB; alpha is dropped.
Image8 read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image8& image);

/// Scales bytes to [0, 1].
template <typename T>
FeatureMap<T> image_to_map(const Image8& image);

/// Clamps to [0, 1] and rounds to the nearest byte.
template <typename T>
Image8 map_to_image(const FeatureMap<T>& map);

}  // namespace mlcrnn
