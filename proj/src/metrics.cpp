#include "mlcrnn/metrics.hpp"

#include <numeric>

namespace mlcrnn {

template <typename T>
LabelMap argmax_labels(const FeatureMap<T>& probs) {
  LabelMap out(probs.height(), probs.width());
  for (std::size_t r = 0; r < probs.height(); ++r) {
    for (std::size_t c = 0; c < probs.width(); ++c) {
      const auto p = probs.pixel(r, c);
      std::size_t best = 0;
      for (std::size_t k = 1; k < p.size(); ++k) {
        if (p[k] > p[best]) best = k;
      }
      out.at(r, c) = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

void ConfusionMatrix::add(const LabelMap& truth, const LabelMap& predicted) {
  if (truth.height != predicted.height || truth.width != predicted.width) {
    throw DimensionError("ConfusionMatrix: label maps differ in size");
  }
  for (std::size_t i = 0; i < truth.data.size(); ++i) {
    const std::uint8_t t = truth.data[i];
    if (t == kIgnoreLabel) continue;
    if (t >= classes_ || predicted.data[i] >= classes_) {
      throw DimensionError("ConfusionMatrix: label out of range");
    }
    add(t, predicted.data[i]);
  }
}

std::uint64_t ConfusionMatrix::row_total(std::size_t truth) const {
  const auto begin = counts_.begin() + static_cast<std::ptrdiff_t>(truth * classes_);
  return std::accumulate(begin, begin + static_cast<std::ptrdiff_t>(classes_), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

MetricsReport summarize(const ConfusionMatrix& confusion) {
  MetricsReport m;
  m.confusion = confusion;
  const std::size_t n = confusion.classes();
  m.per_class.assign(n, -1.0);
  std::uint64_t correct = 0;
  double class_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < n; ++k) {
    correct += confusion.count(k, k);
    const std::uint64_t row = confusion.row_total(k);
    if (row == 0) continue;
    m.per_class[k] = static_cast<double>(confusion.count(k, k)) / static_cast<double>(row);
    class_sum += m.per_class[k];
    ++present;
  }
  const std::uint64_t total = confusion.total();
  m.pixel_accuracy = total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
  m.class_accuracy = present == 0 ? 0.0 : class_sum / static_cast<double>(present);
  return m;
}

template LabelMap argmax_labels<float>(const FeatureMap<float>&);
template LabelMap argmax_labels<double>(const FeatureMap<double>&);

}  // namespace mlcrnn
