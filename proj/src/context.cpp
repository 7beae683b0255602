#include "mlcrnn/context.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>

namespace mlcrnn {

std::vector<std::size_t> rounded_partition(std::size_t extent, std::size_t parts) {
  std::vector<std::size_t> bounds(parts + 1);
  // floor(k * extent / parts + 1/2) in exact integer arithmetic.
  for (std::size_t k = 0; k <= parts; ++k) bounds[k] = (2 * k * extent + parts) / (2 * parts);
  return bounds;
}

template <typename T>
GlobalFeature<T> global_feature(const FeatureMap<T>& map) {
  if (map.height() < 3 || map.width() < 3) {
    throw DimensionError("global_feature: map must be at least 3x3, got " + map.shape_string());
  }
  GlobalFeature<T> g;
  g.height = map.height();
  g.width = map.width();
  g.channels = map.channels();
  const auto rb = rounded_partition(map.height(), 3);
  const auto cb = rounded_partition(map.width(), 3);
  std::copy(rb.begin(), rb.end(), g.row_bounds.begin());
  std::copy(cb.begin(), cb.end(), g.col_bounds.begin());

  const std::size_t d = map.channels();
  g.values.assign(9 * d, T(0));
  g.argmax.assign(9 * d, 0);
  for (std::size_t br = 0; br < 3; ++br) {
    for (std::size_t bc = 0; bc < 3; ++bc) {
      const std::size_t block = br * 3 + bc;
      for (std::size_t ch = 0; ch < d; ++ch) {
        std::size_t best = map.index(rb[br], cb[bc], ch);
        for (std::size_t r = rb[br]; r < rb[br + 1]; ++r) {
          for (std::size_t c = cb[bc]; c < cb[bc + 1]; ++c) {
            const std::size_t idx = map.index(r, c, ch);
            if (map.values()[idx] > map.values()[best]) best = idx;
          }
        }
        g.values[block * d + ch] = map.values()[best];
        g.argmax[block * d + ch] = best;
      }
    }
  }
  return g;
}

template <typename T>
FeatureMap<T> global_feature_backward(const GlobalFeature<T>& record, std::span<const T> d_g) {
  if (record.argmax.empty() || record.argmax.size() != 9 * record.channels) {
    throw StateError("global_feature_backward: argmax record is empty or stale");
  }
  if (d_g.size() != record.argmax.size()) {
    throw DimensionError("global_feature_backward: dG has length " + std::to_string(d_g.size()) +
                         ", expected " + std::to_string(record.argmax.size()));
  }
  FeatureMap<T> d_map(record.height, record.width, record.channels);
  for (std::size_t i = 0; i < d_g.size(); ++i) d_map.values()[record.argmax[i]] += d_g[i];
  return d_map;
}

std::vector<double> oriented_kernel(double sigma, double theta, std::size_t& radius) {
  radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  const std::size_t size = 2 * radius + 1;
  const auto r = static_cast<long>(radius);
  std::vector<double> k(size * size);
  const double c = std::cos(theta), s = std::sin(theta);
  double l1 = 0.0;
  for (long y = -r; y <= r; ++y) {
    for (long x = -r; x <= r; ++x) {
      const double u = static_cast<double>(x) * c + static_cast<double>(y) * s;
      const double v = -u / (sigma * sigma) *
                       std::exp(-static_cast<double>(x * x + y * y) / (2.0 * sigma * sigma));
      k[static_cast<std::size_t>((y + r) * static_cast<long>(size) + (x + r))] = v;
      l1 += std::abs(v);
    }
  }
  for (double& v : k) v /= l1;
  return k;
}

template <typename T>
Vector<T> topic_feature(const FeatureMap<T>& image, const TopicConfig& config) {
  if (image.channels() != 1 && image.channels() != 3) {
    throw DimensionError("topic_feature: image must have 1 or 3 channels, got " +
                         std::to_string(image.channels()));
  }
  if (image.height() < config.grid || image.width() < config.grid) {
    throw DimensionError("topic_feature: image " + image.shape_string() +
                         " is smaller than the descriptor grid");
  }
  const std::size_t h = image.height(), w = image.width();
  std::vector<double> gray(h * w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const auto p = image.pixel(r, c);
      gray[r * w + c] = p.size() == 1 ? static_cast<double>(p[0])
                                      : 0.299 * static_cast<double>(p[0]) +
                                            0.587 * static_cast<double>(p[1]) +
                                            0.114 * static_cast<double>(p[2]);
    }
  }
  // Shifted mean: a constant image yields exactly zero after centering.
  const double base = *std::min_element(gray.begin(), gray.end());
  double shifted = 0.0;
  for (double v : gray) shifted += v - base;
  const double mean = base + shifted / static_cast<double>(gray.size());
  for (double& v : gray) v -= mean;

  const auto rb = rounded_partition(h, config.grid);
  const auto cb = rounded_partition(w, config.grid);
  Vector<T> out;
  out.reserve(config.length());
  std::vector<double> energy(h * w);
  for (double sigma : config.scales) {
    for (std::size_t o = 0; o < config.orientations; ++o) {
      const double theta = std::numbers::pi * static_cast<double>(o) /
                           static_cast<double>(config.orientations);
      std::size_t radius = 0;
      const auto k = oriented_kernel(sigma, theta, radius);
      const std::size_t ks = 2 * radius + 1;
      const auto rr = static_cast<long>(radius);
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
          double acc = 0.0;
          for (long dy = -rr; dy <= rr; ++dy) {
            const long sy = static_cast<long>(r) + dy;
            if (sy < 0 || sy >= static_cast<long>(h)) continue;
            for (long dx = -rr; dx <= rr; ++dx) {
              const long sx = static_cast<long>(c) + dx;
              if (sx < 0 || sx >= static_cast<long>(w)) continue;
              acc += k[static_cast<std::size_t>((dy + rr) * static_cast<long>(ks) + (dx + rr))] *
                     gray[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)];
            }
          }
          energy[r * w + c] = acc * acc;
        }
      }
      for (std::size_t gr = 0; gr < config.grid; ++gr) {
        for (std::size_t gc = 0; gc < config.grid; ++gc) {
          double sum = 0.0;
          for (std::size_t r = rb[gr]; r < rb[gr + 1]; ++r) {
            for (std::size_t c = cb[gc]; c < cb[gc + 1]; ++c) sum += energy[r * w + c];
          }
          const auto cells = static_cast<double>((rb[gr + 1] - rb[gr]) * (cb[gc + 1] - cb[gc]));
          out.push_back(static_cast<T>(sum / cells));
        }
      }
    }
  }
  return out;
}

template <typename T>
Vector<T> load_topic_feature(const std::filesystem::path& path, std::size_t expected_length) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open topic vector file " + path.string());
  Vector<T> values;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t");
    const std::string token = line.substr(first, last - first + 1);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(token, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != token.size() || !std::isfinite(v)) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": not a number: '" + token + "'");
    }
    values.push_back(static_cast<T>(v));
  }
  if (expected_length != 0 && values.size() != expected_length) {
    throw ParseError(path.string() + ": topic vector has " + std::to_string(values.size()) +
                     " entries, expected " + std::to_string(expected_length));
  }
  return values;
}

template <typename T>
void save_topic_feature(const std::filesystem::path& path, std::span<const T> values) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write topic vector file " + path.string());
  out << std::setprecision(std::numeric_limits<T>::max_digits10);
  for (T v : values) out << v << '\n';
}

#define MLCRNN_INSTANTIATE_CONTEXT(T)                                                            \
  template GlobalFeature<T> global_feature<T>(const FeatureMap<T>&);                             \
  template FeatureMap<T> global_feature_backward<T>(const GlobalFeature<T>&, std::span<const T>); \
  template Vector<T> topic_feature<T>(const FeatureMap<T>&, const TopicConfig&);                 \
  template Vector<T> load_topic_feature<T>(const std::filesystem::path&, std::size_t);           \
  template void save_topic_feature<T>(const std::filesystem::path&, std::span<const T>);

MLCRNN_INSTANTIATE_CONTEXT(float)
MLCRNN_INSTANTIATE_CONTEXT(double)

}  // namespace mlcrnn
