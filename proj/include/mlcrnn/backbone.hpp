#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mlcrnn/tensor.hpp"

namespace mlcrnn {

/// A stack of (3x3 conv, ReLU, 2x2 max-pool) stages. Tap k (1-based) is the
/// output of stage k and has stride 2^k; tap 0 is the raw input.
struct BackboneConfig {
  std::size_t input_channels = 3;
  std::vector<std::size_t> stage_filters{8, 16, 32};
  std::vector<std::size_t> taps{1, 2, 3};

  std::size_t tap_channels(std::size_t tap_index) const;
  /// 2^(deepest tapped stage): image dims must be divisible by this.
  std::size_t required_divisor() const;
  void validate() const;
};

template <typename T>
struct BackboneParams {
  std::vector<ConvKernel<T>> kernels;
  std::vector<Vector<T>> biases;

  static BackboneParams zeros(const BackboneConfig& config);

  template <typename F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    for (std::size_t s = 0; s < self.kernels.size(); ++s) {
      auto& k = self.kernels[s];
      const std::string tag = "backbone.stage" + std::to_string(s + 1);
      f(tag + ".kernel",
        std::vector<std::size_t>{k.kernel_h(), k.kernel_w(), k.in_channels(), k.out_channels()},
        k.values());
      auto& b = self.biases[s];
      f(tag + ".bias", std::vector<std::size_t>{b.size()}, std::span(b.data(), b.size()));
    }
  }
};

template <typename T>
struct BackboneStageCache {
  Conv2dCache<T> conv;
  FeatureMap<T> pre;  // conv output before ReLU
  MaxPoolResult<T> pool;
};

template <typename T>
struct BackboneCache {
  const BackboneConfig* config = nullptr;
  std::vector<BackboneStageCache<T>> stages;
  std::size_t in_height = 0;
  std::size_t in_width = 0;
  bool live = false;
};

/// Returns one map per configured tap, in tap order.
template <typename T>
std::vector<FeatureMap<T>> backbone_forward(const FeatureMap<T>& image, const BackboneConfig& config,
                                            const BackboneParams<T>& params,
                                            BackboneCache<T>* cache = nullptr);

template <typename T>
struct BackboneGrads {
  BackboneParams<T> d_params;
  FeatureMap<T> d_image;
};

/// Gradients from all taps accumulate into the shared earlier stages.
/// Consumes the cache; a second call throws StateError.
template <typename T>
BackboneGrads<T> backbone_backward(BackboneCache<T>& cache, const std::vector<FeatureMap<T>>& d_taps);

}  // namespace mlcrnn
