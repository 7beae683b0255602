#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mlcrnn/tensor.hpp"

namespace mlcrnn {

enum class FusionMode { kAttention, kAverage, kMax };

std::string_view fusion_mode_name(FusionMode mode);
/// Accepts "attention"/"att", "average"/"avg", "max".
FusionMode parse_fusion_mode(std::string_view text);

/// Two-layer scoring network: 3x3 conv (Q*C -> F), ReLU, 1x1 conv (F -> Q).
template <typename T>
struct AttentionParams {
  ConvKernel<T> conv1;
  Vector<T> bias1;
  ConvKernel<T> conv2;
  Vector<T> bias2;

  static AttentionParams zeros(std::size_t levels, std::size_t classes, std::size_t filters);
  std::size_t levels() const { return conv2.out_channels(); }

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
    auto kshape = [](const auto& k) {
      return std::vector<std::size_t>{k.kernel_h(), k.kernel_w(), k.in_channels(), k.out_channels()};
    };
    f(std::string("att.conv1"), kshape(self.conv1), self.conv1.values());
    f(std::string("att.bias1"), std::vector<std::size_t>{self.bias1.size()},
      std::span(self.bias1.data(), self.bias1.size()));
    f(std::string("att.conv2"), kshape(self.conv2), self.conv2.values());
    f(std::string("att.bias2"), std::vector<std::size_t>{self.bias2.size()},
      std::span(self.bias2.data(), self.bias2.size()));
  }
};

template <typename T>
struct FusionOutput {
  FusionMode mode = FusionMode::kAttention;
  FeatureMap<T> fused;    // z: H x W x C
  FeatureMap<T> weights;  // omega: H x W x Q (attention and average modes)
  FeatureMap<T> scores;   // r: H x W x Q (attention mode only)
};

template <typename T>
struct AttentionCache {
  const AttentionParams<T>* params = nullptr;
  std::vector<FeatureMap<T>> levels;
  Conv2dCache<T> conv1;
  Conv2dCache<T> conv2;
  FeatureMap<T> hidden_pre;  // conv1 output before ReLU
  FeatureMap<T> weights;
  bool live = false;
};

/// z(i, c) = sum_q omega(i, q) * f_q(i, c) with omega(i, .) = softmax(r(i, .)).
template <typename T>
FusionOutput<T> fuse_attention(std::span<const FeatureMap<T>> levels, const AttentionParams<T>& params,
                               AttentionCache<T>* cache = nullptr);

template <typename T>
struct AttentionGrads {
  std::vector<FeatureMap<T>> d_levels;
  AttentionParams<T> d_params;
};

/// Consumes the cache; a second call throws StateError.
template <typename T>
AttentionGrads<T> fuse_attention_backward(AttentionCache<T>& cache, const FeatureMap<T>& d_fused);

/// Per-position weighted sum shared by the attention and average paths.
template <typename T>
FeatureMap<T> combine_levels(std::span<const FeatureMap<T>> levels, const FeatureMap<T>& weights);

/// What a baseline fusion must remember for its backward pass.
struct BaselineRecord {
  FusionMode mode = FusionMode::kAverage;
  /// Max mode: level index of the maximum for every (position, class) entry.
  std::vector<std::size_t> argmax_level;
  std::size_t levels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
};

/// Levelwise mean, computed as combine_levels with uniform weights 1/Q.
template <typename T>
FusionOutput<T> fuse_average(std::span<const FeatureMap<T>> levels, BaselineRecord* record = nullptr);

/// Elementwise max across levels; ties go to the lowest level index.
template <typename T>
FusionOutput<T> fuse_max(std::span<const FeatureMap<T>> levels, BaselineRecord* record = nullptr);

/// Average: dZ / Q to every level. Max: dZ routed to the recorded level.
template <typename T>
std::vector<FeatureMap<T>> fuse_baseline_backward(FusionMode mode, const BaselineRecord& record,
                                                  const FeatureMap<T>& d_fused);

}  // namespace mlcrnn
