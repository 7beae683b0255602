#include "mlcrnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace mlcrnn {

namespace {

void require_positive(std::size_t h, std::size_t w, std::size_t c, const char* what) {
  if (h == 0 || w == 0 || c == 0) {
    std::ostringstream os;
    os << what << ": dimensions must be positive, got " << h << "x" << w << "x" << c;
    throw DimensionError(os.str());
  }
}

struct AxisSample {
  std::size_t lo;
  std::size_t hi;
  double frac;
};

std::vector<AxisSample> axis_samples(std::size_t in_size, std::size_t out_size) {
  std::vector<AxisSample> samples(out_size);
  for (std::size_t i = 0; i < out_size; ++i) {
    const double s = upsample_source_coord(i, in_size, out_size);
    const auto lo = static_cast<std::size_t>(std::floor(s));
    const std::size_t hi = std::min(lo + 1, in_size - 1);
    samples[i] = {lo, hi, s - static_cast<double>(lo)};
  }
  return samples;
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
FeatureMap<T>::FeatureMap(std::size_t height, std::size_t width, std::size_t channels, T fill)
    : height_(height), width_(width), channels_(channels) {
  require_positive(height, width, channels, "FeatureMap");
  data_.assign(height * width * channels, fill);
}

template <typename T>
bool FeatureMap<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
void FeatureMap<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
std::string FeatureMap<T>::shape_string() const {
  std::ostringstream os;
  os << height_ << "x" << width_ << "x" << channels_;
  return os.str();
}

template <typename T>
Matrix<T>::Matrix(std::size_t rows, std::size_t cols, T fill) : rows_(rows), cols_(cols) {
  data_.assign(rows * cols, fill);
}

template <typename T>
void Matrix<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
ConvKernel<T>::ConvKernel(std::size_t kernel_h, std::size_t kernel_w, std::size_t in_channels,
                          std::size_t out_channels, T fill)
    : kh_(kernel_h), kw_(kernel_w), cin_(in_channels), cout_(out_channels) {
  if (kernel_h == 0 || kernel_w == 0 || in_channels == 0 || out_channels == 0) {
    throw DimensionError("ConvKernel: dimensions must be positive");
  }
  data_.assign(kernel_h * kernel_w * in_channels * out_channels, fill);
}

template <typename T>
void ConvKernel<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

// ---------------------------------------------------------------------------

template <typename T>
void matvec_acc(std::span<T> y, const Matrix<T>& a, std::span<const T> x) {
  if (y.size() != a.rows() || x.size() != a.cols()) throw DimensionError("matvec: shape mismatch");
  const T* p = a.values().data();
  for (std::size_t r = 0; r < a.rows(); ++r, p += a.cols()) {
    T acc = T(0);
    for (std::size_t c = 0; c < a.cols(); ++c) acc += p[c] * x[c];
    y[r] += acc;
  }
}

template <typename T>
void matvec_transposed_acc(std::span<T> y, const Matrix<T>& a, std::span<const T> x) {
  if (y.size() != a.cols() || x.size() != a.rows()) {
    throw DimensionError("matvec_transposed: shape mismatch");
  }
  const T* p = a.values().data();
  for (std::size_t r = 0; r < a.rows(); ++r, p += a.cols()) {
    const T xr = x[r];
    if (xr == T(0)) continue;
    for (std::size_t c = 0; c < a.cols(); ++c) y[c] += p[c] * xr;
  }
}

template <typename T>
void outer_acc(Matrix<T>& a, std::span<const T> u, std::span<const T> v) {
  if (u.size() != a.rows() || v.size() != a.cols()) throw DimensionError("outer: shape mismatch");
  T* p = a.values().data();
  for (std::size_t r = 0; r < a.rows(); ++r, p += a.cols()) {
    const T ur = u[r];
    if (ur == T(0)) continue;
    for (std::size_t c = 0; c < a.cols(); ++c) p[c] += ur * v[c];
  }
}

// ---------------------------------------------------------------------------

template <typename T>
FeatureMap<T> conv2d(const FeatureMap<T>& input, const ConvKernel<T>& kernel,
                     std::span<const T> bias, std::size_t padding, Conv2dCache<T>* cache) {
  if (kernel.in_channels() != input.channels()) {
    std::ostringstream os;
    os << "conv2d: kernel expects " << kernel.in_channels() << " input channels, map has "
       << input.channels();
    throw DimensionError(os.str());
  }
  if (kernel.kernel_h() % 2 == 0 || kernel.kernel_w() % 2 == 0) {
    throw DimensionError("conv2d: kernel spatial dims must be odd");
  }
  if (padding != (kernel.kernel_h() - 1) / 2 || kernel.kernel_h() != kernel.kernel_w()) {
    throw DimensionError("conv2d: only square kernels with same-size padding are supported");
  }
  if (bias.size() != kernel.out_channels()) throw DimensionError("conv2d: bias length mismatch");

  const std::size_t h = input.height(), w = input.width();
  const std::size_t cin = input.channels(), cout = kernel.out_channels();
  const std::size_t k = kernel.kernel_h();
  const auto pad = static_cast<std::ptrdiff_t>(padding);

  FeatureMap<T> out(h, w, cout);
  const T* in_data = input.values().data();
  const T* k_data = kernel.values().data();
  T* out_data = out.values().data();

  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      T* o = out_data + (y * w + x) * cout;
      for (std::size_t co = 0; co < cout; ++co) o[co] = bias[co];
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - pad;
          if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
          const T* src = in_data + (static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * cin;
          const T* kk = k_data + (ky * k + kx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const T v = src[ci];
            if (v == T(0)) continue;
            const T* kc = kk + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) o[co] += v * kc[co];
          }
        }
      }
    }
  }
  if (cache != nullptr) {
    cache->input = input;
    cache->kernel = kernel;
    cache->padding = padding;
    cache->live = true;
  }
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(Conv2dCache<T>& cache, const FeatureMap<T>& d_out) {
  if (!cache.live) throw StateError("conv2d_backward: cache is stale or was never filled");
  const FeatureMap<T>& input = cache.input;
  const ConvKernel<T>& kernel = cache.kernel;
  if (d_out.height() != input.height() || d_out.width() != input.width() ||
      d_out.channels() != kernel.out_channels()) {
    throw DimensionError("conv2d_backward: dOut shape " + d_out.shape_string() +
                         " does not match forward output");
  }
  const std::size_t h = input.height(), w = input.width();
  const std::size_t cin = input.channels(), cout = kernel.out_channels();
  const std::size_t k = kernel.kernel_h();
  const auto pad = static_cast<std::ptrdiff_t>(cache.padding);

  Conv2dGrads<T> g{FeatureMap<T>(h, w, cin), ConvKernel<T>(k, k, cin, cout), Vector<T>(cout, T(0))};
  const T* in_data = input.values().data();
  const T* k_data = kernel.values().data();
  const T* d_data = d_out.values().data();
  T* di_data = g.d_input.values().data();
  T* dk_data = g.d_kernel.values().data();

  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const T* d = d_data + (y * w + x) * cout;
      for (std::size_t co = 0; co < cout; ++co) g.d_bias[co] += d[co];
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - pad;
          if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
          const std::size_t src_off =
              (static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * cin;
          const T* src = in_data + src_off;
          T* dsrc = di_data + src_off;
          const std::size_t k_off = (ky * k + kx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const T* kc = k_data + k_off + ci * cout;
            T* dkc = dk_data + k_off + ci * cout;
            const T v = src[ci];
            T acc = T(0);
            for (std::size_t co = 0; co < cout; ++co) {
              acc += kc[co] * d[co];
              dkc[co] += v * d[co];
            }
            dsrc[ci] += acc;
          }
        }
      }
    }
  }
  cache.live = false;
  return g;
}

// ---------------------------------------------------------------------------

template <typename T>
MaxPoolResult<T> maxpool2d(const FeatureMap<T>& input) {
  if (input.height() % 2 != 0 || input.width() % 2 != 0) {
    throw DimensionError("maxpool2d: height and width must be even, got " + input.shape_string());
  }
  const std::size_t oh = input.height() / 2, ow = input.width() / 2, c = input.channels();
  MaxPoolResult<T> r{FeatureMap<T>(oh, ow, c), std::vector<std::size_t>(oh * ow * c),
                     input.height(), input.width(), c};
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = input.index(2 * y, 2 * x, ch);
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = input.index(2 * y + dy, 2 * x + dx, ch);
            if (input.values()[idx] > input.values()[best]) best = idx;
          }
        }
        const std::size_t o = r.output.index(y, x, ch);
        r.output.values()[o] = input.values()[best];
        r.argmax[o] = best;
      }
    }
  }
  return r;
}

template <typename T>
FeatureMap<T> maxpool2d_backward(const MaxPoolResult<T>& record, const FeatureMap<T>& d_out) {
  if (!d_out.same_shape(record.output)) {
    throw DimensionError("maxpool2d_backward: dOut shape " + d_out.shape_string() +
                         " does not match pooled output " + record.output.shape_string());
  }
  FeatureMap<T> d_in(record.in_height, record.in_width, record.in_channels);
  for (std::size_t i = 0; i < record.argmax.size(); ++i) {
    d_in.values()[record.argmax[i]] += d_out.values()[i];
  }
  return d_in;
}

// ---------------------------------------------------------------------------

double upsample_source_coord(std::size_t i, std::size_t in_size, std::size_t out_size) {
  const double s = (static_cast<double>(i) + 0.5) * (static_cast<double>(in_size) /
                                                      static_cast<double>(out_size)) - 0.5;
  return std::clamp(s, 0.0, static_cast<double>(in_size - 1));
}

template <typename T>
FeatureMap<T> bilinear_upsample(const FeatureMap<T>& input, std::size_t target_h,
                                std::size_t target_w) {
  if (target_h < input.height() || target_w < input.width()) {
    std::ostringstream os;
    os << "bilinear_upsample: target " << target_h << "x" << target_w
       << " is smaller than source " << input.shape_string();
    throw DimensionError(os.str());
  }
  if (target_h == input.height() && target_w == input.width()) return input;

  const std::size_t c = input.channels();
  const auto rows = axis_samples(input.height(), target_h);
  const auto cols = axis_samples(input.width(), target_w);
  FeatureMap<T> out(target_h, target_w, c);
  for (std::size_t y = 0; y < target_h; ++y) {
    const T fy = static_cast<T>(rows[y].frac);
    for (std::size_t x = 0; x < target_w; ++x) {
      const T fx = static_cast<T>(cols[x].frac);
      const auto a = input.pixel(rows[y].lo, cols[x].lo);
      const auto b = input.pixel(rows[y].lo, cols[x].hi);
      const auto d = input.pixel(rows[y].hi, cols[x].lo);
      const auto e = input.pixel(rows[y].hi, cols[x].hi);
      auto o = out.pixel(y, x);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T top = (T(1) - fx) * a[ch] + fx * b[ch];
        const T bottom = (T(1) - fx) * d[ch] + fx * e[ch];
        o[ch] = (T(1) - fy) * top + fy * bottom;
      }
    }
  }
  return out;
}

template <typename T>
FeatureMap<T> bilinear_upsample_backward(const FeatureMap<T>& d_out, std::size_t in_h,
                                         std::size_t in_w) {
  if (d_out.height() < in_h || d_out.width() < in_w) {
    throw DimensionError("bilinear_upsample_backward: dOut smaller than source dims");
  }
  if (d_out.height() == in_h && d_out.width() == in_w) return d_out;

  const std::size_t c = d_out.channels();
  const auto rows = axis_samples(in_h, d_out.height());
  const auto cols = axis_samples(in_w, d_out.width());
  FeatureMap<T> d_in(in_h, in_w, c);
  for (std::size_t y = 0; y < d_out.height(); ++y) {
    const T fy = static_cast<T>(rows[y].frac);
    for (std::size_t x = 0; x < d_out.width(); ++x) {
      const T fx = static_cast<T>(cols[x].frac);
      const auto g = d_out.pixel(y, x);
      auto a = d_in.pixel(rows[y].lo, cols[x].lo);
      auto b = d_in.pixel(rows[y].lo, cols[x].hi);
      auto d = d_in.pixel(rows[y].hi, cols[x].lo);
      auto e = d_in.pixel(rows[y].hi, cols[x].hi);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T top = (T(1) - fy) * g[ch];
        const T bottom = fy * g[ch];
        a[ch] += (T(1) - fx) * top;
        b[ch] += fx * top;
        d[ch] += (T(1) - fx) * bottom;
        e[ch] += fx * bottom;
      }
    }
  }
  return d_in;
}

// ---------------------------------------------------------------------------

template <typename T>
FeatureMap<T> relu(const FeatureMap<T>& x) {
  FeatureMap<T> y = x;
  for (T& v : y.values()) v = v > T(0) ? v : T(0);
  return y;
}

template <typename T>
FeatureMap<T> relu_backward(const FeatureMap<T>& x, const FeatureMap<T>& d_y) {
  if (!x.same_shape(d_y)) throw DimensionError("relu_backward: shape mismatch");
  FeatureMap<T> d_x = d_y;
  auto xs = x.values();
  auto ds = d_x.values();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!(xs[i] > T(0))) ds[i] = T(0);
  }
  return d_x;
}

template <typename T>
FeatureMap<T> softmax_channels(const FeatureMap<T>& input) {
  FeatureMap<T> out(input.height(), input.width(), input.channels());
  for (std::size_t y = 0; y < input.height(); ++y) {
    for (std::size_t x = 0; x < input.width(); ++x) {
      const auto in = input.pixel(y, x);
      auto o = out.pixel(y, x);
      const T m = *std::max_element(in.begin(), in.end());
      T sum = T(0);
      for (std::size_t c = 0; c < in.size(); ++c) {
        o[c] = std::exp(in[c] - m);
        sum += o[c];
      }
      for (T& v : o) v /= sum;
    }
  }
  return out;
}

template <typename T>
FeatureMap<T> concat_channels(std::span<const FeatureMap<T>> maps) {
  if (maps.empty()) throw DimensionError("concat_channels: no maps");
  const std::size_t h = maps[0].height(), w = maps[0].width();
  std::size_t total = 0;
  for (const auto& m : maps) {
    if (m.height() != h || m.width() != w) {
      throw DimensionError("concat_channels: spatial dims differ (" + maps[0].shape_string() +
                           " vs " + m.shape_string() + ")");
    }
    total += m.channels();
  }
  FeatureMap<T> out(h, w, total);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      auto o = out.pixel(y, x);
      std::size_t off = 0;
      for (const auto& m : maps) {
        const auto p = m.pixel(y, x);
        std::copy(p.begin(), p.end(), o.begin() + static_cast<std::ptrdiff_t>(off));
        off += p.size();
      }
    }
  }
  return out;
}

#define MLCRNN_INSTANTIATE_TENSOR(T)                                                          \
  template class FeatureMap<T>;                                                               \
  template class Matrix<T>;                                                                   \
  template class ConvKernel<T>;                                                               \
  template void matvec_acc<T>(std::span<T>, const Matrix<T>&, std::span<const T>);            \
  template void matvec_transposed_acc<T>(std::span<T>, const Matrix<T>&, std::span<const T>); \
  template void outer_acc<T>(Matrix<T>&, std::span<const T>, std::span<const T>);             \
  template FeatureMap<T> conv2d<T>(const FeatureMap<T>&, const ConvKernel<T>&,                \
                                   std::span<const T>, std::size_t, Conv2dCache<T>*);         \
  template Conv2dGrads<T> conv2d_backward<T>(Conv2dCache<T>&, const FeatureMap<T>&);          \
  template MaxPoolResult<T> maxpool2d<T>(const FeatureMap<T>&);                               \
  template FeatureMap<T> maxpool2d_backward<T>(const MaxPoolResult<T>&, const FeatureMap<T>&); \
  template FeatureMap<T> bilinear_upsample<T>(const FeatureMap<T>&, std::size_t, std::size_t); \
  template FeatureMap<T> bilinear_upsample_backward<T>(const FeatureMap<T>&, std::size_t,     \
                                                       std::size_t);                          \
  template FeatureMap<T> relu<T>(const FeatureMap<T>&);                                       \
  template FeatureMap<T> relu_backward<T>(const FeatureMap<T>&, const FeatureMap<T>&);        \
  template FeatureMap<T> softmax_channels<T>(const FeatureMap<T>&);                           \
  template FeatureMap<T> concat_channels<T>(std::span<const FeatureMap<T>>);

MLCRNN_INSTANTIATE_TENSOR(float)
MLCRNN_INSTANTIATE_TENSOR(double)

}  // namespace mlcrnn
