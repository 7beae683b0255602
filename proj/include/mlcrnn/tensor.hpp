#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "mlcrnn/error.hpp"

namespace mlcrnn {

enum class Precision { kSingle, kDouble };

template <typename T>
constexpr Precision precision_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? Precision::kSingle : Precision::kDouble;
}

/// Dense height x width x channels array, row-major in (h, w, c).
template <typename T>
class FeatureMap {
 public:
  using value_type = T;

  FeatureMap() = default;
  FeatureMap(std::size_t height, std::size_t width, std::size_t channels, T fill = T(0));

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(std::size_t row, std::size_t col, std::size_t ch) const {
    return (row * width_ + col) * channels_ + ch;
  }
  T& at(std::size_t row, std::size_t col, std::size_t ch) { return data_[index(row, col, ch)]; }
  const T& at(std::size_t row, std::size_t col, std::size_t ch) const {
    return data_[index(row, col, ch)];
  }

  /// Channel vector of one spatial position.
  std::span<T> pixel(std::size_t row, std::size_t col) {
    return {data_.data() + (row * width_ + col) * channels_, channels_};
  }
  std::span<const T> pixel(std::size_t row, std::size_t col) const {
    return {data_.data() + (row * width_ + col) * channels_, channels_};
  }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  bool same_shape(const FeatureMap& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }
  bool all_finite() const;
  void fill(T value);
  std::string shape_string() const;

  friend bool operator==(const FeatureMap& a, const FeatureMap& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<T> data_;
};

/// Row-major dense matrix. A zero extent is allowed and denotes an unused
/// input (e.g. a disabled context vector).
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T(0));

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  void fill(T value);

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <typename T>
using Vector = std::vector<T>;

/// Convolution weights laid out as kH x kW x Cin x Cout.
template <typename T>
class ConvKernel {
 public:
  ConvKernel() = default;
  ConvKernel(std::size_t kernel_h, std::size_t kernel_w, std::size_t in_channels,
             std::size_t out_channels, T fill = T(0));

  std::size_t kernel_h() const { return kh_; }
  std::size_t kernel_w() const { return kw_; }
  std::size_t in_channels() const { return cin_; }
  std::size_t out_channels() const { return cout_; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(std::size_t ky, std::size_t kx, std::size_t ci, std::size_t co) const {
    return ((ky * kw_ + kx) * cin_ + ci) * cout_ + co;
  }
  T& at(std::size_t ky, std::size_t kx, std::size_t ci, std::size_t co) {
    return data_[index(ky, kx, ci, co)];
  }
  const T& at(std::size_t ky, std::size_t kx, std::size_t ci, std::size_t co) const {
    return data_[index(ky, kx, ci, co)];
  }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  void fill(T value);

  friend bool operator==(const ConvKernel& a, const ConvKernel& b) {
    return a.kh_ == b.kh_ && a.kw_ == b.kw_ && a.cin_ == b.cin_ && a.cout_ == b.cout_ &&
           a.data_ == b.data_;
  }

 private:
  std::size_t kh_ = 0;
  std::size_t kw_ = 0;
  std::size_t cin_ = 0;
  std::size_t cout_ = 0;
  std::vector<T> data_;
};

// ---------------------------------------------------------------------------
// Dense linear algebra helpers used by the recurrent layer.

/// y += A x
template <typename T>
void matvec_acc(std::span<T> y, const Matrix<T>& a, std::span<const T> x);
/// y += A^T x
template <typename T>
void matvec_transposed_acc(std::span<T> y, const Matrix<T>& a, std::span<const T> x);
/// A += u v^T
template <typename T>
void outer_acc(Matrix<T>& a, std::span<const T> u, std::span<const T> v);

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
struct Conv2dCache {
  FeatureMap<T> input;
  ConvKernel<T> kernel;
  std::size_t padding = 0;
  bool live = false;
};

template <typename T>
struct Conv2dGrads {
  FeatureMap<T> d_input;
  ConvKernel<T> d_kernel;
  Vector<T> d_bias;
};

/// Same-size cross-correlation with symmetric zero padding (k - 1) / 2.
/// When `cache` is given it receives what conv2d_backward needs.
template <typename T>
FeatureMap<T> conv2d(const FeatureMap<T>& input, const ConvKernel<T>& kernel,
                     std::span<const T> bias, std::size_t padding,
                     Conv2dCache<T>* cache = nullptr);

/// Gradients of conv2d. Consumes the cache; a second call throws StateError.
template <typename T>
Conv2dGrads<T> conv2d_backward(Conv2dCache<T>& cache, const FeatureMap<T>& d_out);

// ---------------------------------------------------------------------------
// Pooling

template <typename T>
struct MaxPoolResult {
  FeatureMap<T> output;
  /// Flat input index of the selected cell for every output entry.
  std::vector<std::size_t> argmax;
  std::size_t in_height = 0;
  std::size_t in_width = 0;
  std::size_t in_channels = 0;
};

/// 2x2 window, stride 2. Ties go to the first cell in row-major window order.
template <typename T>
MaxPoolResult<T> maxpool2d(const FeatureMap<T>& input);

template <typename T>
FeatureMap<T> maxpool2d_backward(const MaxPoolResult<T>& record, const FeatureMap<T>& d_out);

// ---------------------------------------------------------------------------
// Upsampling

/// Source coordinate of output index `i` under the half-pixel-center rule.
double upsample_source_coord(std::size_t i, std::size_t in_size, std::size_t out_size);

template <typename T>
FeatureMap<T> bilinear_upsample(const FeatureMap<T>& input, std::size_t target_h,
                                std::size_t target_w);

/// Transpose of bilinear_upsample for an input of in_h x in_w.
template <typename T>
FeatureMap<T> bilinear_upsample_backward(const FeatureMap<T>& d_out, std::size_t in_h,
                                         std::size_t in_w);

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
FeatureMap<T> relu(const FeatureMap<T>& x);

/// Passes dY where x > 0; the subgradient at exactly 0 is 0.
template <typename T>
FeatureMap<T> relu_backward(const FeatureMap<T>& x, const FeatureMap<T>& d_y);

/// Per-position softmax over channels with max subtraction.
template <typename T>
FeatureMap<T> softmax_channels(const FeatureMap<T>& input);

/// Channel concatenation of maps that share height and width.
template <typename T>
FeatureMap<T> concat_channels(std::span<const FeatureMap<T>> maps);

}  // namespace mlcrnn
