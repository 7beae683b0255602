#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <vector>

#include "mlcrnn/tensor.hpp"

namespace mlcrnn {

/// Half-open [begin, end) boundaries of `parts` near-equal pieces of `extent`,
/// computed by rounding cumulative fractions. Piece sizes differ by at most 1.
std::vector<std::size_t> rounded_partition(std::size_t extent, std::size_t parts);

/// Max-pooled 3x3 block summary of a feature map. Entry b * d + ch holds the
/// maximum of channel ch over block b, blocks in row-major order.
template <typename T>
struct GlobalFeature {
  Vector<T> values;
  /// Flat source-map index of every entry's maximum.
  std::vector<std::size_t> argmax;
  std::array<std::size_t, 4> row_bounds{};
  std::array<std::size_t, 4> col_bounds{};
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
};

template <typename T>
GlobalFeature<T> global_feature(const FeatureMap<T>& map);

/// Scatters dG onto the recorded maxima.
template <typename T>
FeatureMap<T> global_feature_backward(const GlobalFeature<T>& record, std::span<const T> d_g);

struct TopicConfig {
  std::vector<double> scales{1.0, 2.0};
  std::size_t orientations = 4;
  std::size_t grid = 4;

  std::size_t length() const { return scales.size() * orientations * grid * grid; }
};

/// Odd-symmetric oriented first-derivative-of-Gaussian kernel, square with
/// radius ceil(3 * sigma), normalized to unit L1 norm.
std::vector<double> oriented_kernel(double sigma, double theta, std::size_t& radius);

/// Holistic band-pass energy descriptor of an image with 1 or 3 channels.
/// Layout: [scale][orientation][grid row][grid col]. The result is a constant
/// input of the model; nothing is differentiated through it.
template <typename T>
Vector<T> topic_feature(const FeatureMap<T>& image, const TopicConfig& config = {});

/// Reads one decimal scalar per line; `expected_length` of 0 skips the check.
template <typename T>
Vector<T> load_topic_feature(const std::filesystem::path& path, std::size_t expected_length);

template <typename T>
void save_topic_feature(const std::filesystem::path& path, std::span<const T> values);

}  // namespace mlcrnn
