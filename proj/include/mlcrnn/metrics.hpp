#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mlcrnn/tensor.hpp"

namespace mlcrnn {

inline constexpr std::uint8_t kIgnoreLabel = 255;

/// Integer class map, row-major. kIgnoreLabel marks pixels excluded from the
/// loss and from every metric.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), data(h * w, fill) {}

  std::uint8_t& at(std::size_t r, std::size_t c) { return data[r * width + c]; }
  std::uint8_t at(std::size_t r, std::size_t c) const { return data[r * width + c]; }
  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

/// Per-pixel argmax over channels; ties go to the lowest class index.
template <typename T>
LabelMap argmax_labels(const FeatureMap<T>& probs);

/// Row = ground-truth class, column = predicted class.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

  /// Adds every valid pixel; ignored ground-truth pixels are skipped.
  void add(const LabelMap& truth, const LabelMap& predicted);
  void add(std::size_t truth, std::size_t predicted) { ++counts_[truth * classes_ + predicted]; }

  std::size_t classes() const { return classes_; }
  std::uint64_t count(std::size_t truth, std::size_t predicted) const {
    return counts_[truth * classes_ + predicted];
  }
  std::uint64_t row_total(std::size_t truth) const;
  std::uint64_t total() const;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

struct MetricsReport {
  double pixel_accuracy = 0.0;
  /// Mean of per-class accuracies over classes present in the ground truth.
  double class_accuracy = 0.0;
  /// Accuracy per class; negative for classes absent from the ground truth.
  std::vector<double> per_class;
  ConfusionMatrix confusion{0};
};

MetricsReport summarize(const ConfusionMatrix& confusion);

}  // namespace mlcrnn
