#include "mlcrnn/backbone.hpp"

#include <algorithm>
#include <sstream>

namespace mlcrnn {

std::size_t BackboneConfig::tap_channels(std::size_t tap_index) const {
  const std::size_t tap = taps.at(tap_index);
  return tap == 0 ? input_channels : stage_filters.at(tap - 1);
}

std::size_t BackboneConfig::required_divisor() const {
  const std::size_t deepest = taps.empty() ? 0 : taps.back();
  return std::size_t{1} << deepest;
}

void BackboneConfig::validate() const {
  if (input_channels == 0) throw DimensionError("backbone: input channel count must be positive");
  if (taps.empty()) throw DimensionError("backbone: at least one tap is required");
  for (std::size_t i = 0; i < taps.size(); ++i) {
    if (i > 0 && taps[i] <= taps[i - 1]) {
      throw DimensionError("backbone: tap indices must be strictly increasing");
    }
    if (taps[i] > stage_filters.size()) {
      throw DimensionError("backbone: tap " + std::to_string(taps[i]) + " exceeds the " +
                           std::to_string(stage_filters.size()) + " configured stages");
    }
  }
  for (std::size_t f : stage_filters) {
    if (f == 0) throw DimensionError("backbone: stage filter counts must be positive");
  }
}

template <typename T>
BackboneParams<T> BackboneParams<T>::zeros(const BackboneConfig& config) {
  config.validate();
  BackboneParams p;
  std::size_t in = config.input_channels;
  for (std::size_t f : config.stage_filters) {
    p.kernels.emplace_back(3, 3, in, f);
    p.biases.emplace_back(f, T(0));
    in = f;
  }
  return p;
}

template <typename T>
std::vector<FeatureMap<T>> backbone_forward(const FeatureMap<T>& image, const BackboneConfig& config,
                                            const BackboneParams<T>& params, BackboneCache<T>* cache) {
  config.validate();
  if (image.channels() != config.input_channels) {
    throw DimensionError("backbone_forward: image has " + std::to_string(image.channels()) +
                         " channels, backbone expects " + std::to_string(config.input_channels));
  }
  const std::size_t div = config.required_divisor();
  if (image.height() % div != 0 || image.width() % div != 0) {
    const std::size_t ph = (div - image.height() % div) % div;
    const std::size_t pw = (div - image.width() % div) % div;
    std::ostringstream os;
    os << "backbone_forward: image " << image.height() << "x" << image.width()
       << " must be divisible by " << div << "; pad by " << ph << " rows and " << pw
       << " columns";
    throw DimensionError(os.str());
  }
  if (params.kernels.size() != config.stage_filters.size()) {
    throw DimensionError("backbone_forward: parameter stage count does not match config");
  }

  const std::size_t needed = config.taps.back();
  std::vector<FeatureMap<T>> taps;
  std::vector<BackboneStageCache<T>> stages(needed);
  std::size_t next_tap = 0;
  if (config.taps.front() == 0) {
    taps.push_back(image);
    ++next_tap;
  }
  FeatureMap<T> x = image;
  for (std::size_t s = 0; s < needed; ++s) {
    auto& st = stages[s];
    st.pre = conv2d<T>(x, params.kernels[s], params.biases[s], 1, cache ? &st.conv : nullptr);
    st.pool = maxpool2d(relu(st.pre));
    x = st.pool.output;
    if (next_tap < config.taps.size() && config.taps[next_tap] == s + 1) {
      taps.push_back(x);
      ++next_tap;
    }
  }
  if (cache != nullptr) {
    cache->config = &config;
    cache->stages = std::move(stages);
    cache->in_height = image.height();
    cache->in_width = image.width();
    cache->live = true;
  }
  return taps;
}

template <typename T>
BackboneGrads<T> backbone_backward(BackboneCache<T>& cache, const std::vector<FeatureMap<T>>& d_taps) {
  if (!cache.live || cache.config == nullptr) {
    throw StateError("backbone_backward: cache is stale or was never filled");
  }
  const BackboneConfig& config = *cache.config;
  if (d_taps.size() != config.taps.size()) {
    throw DimensionError("backbone_backward: expected " + std::to_string(config.taps.size()) +
                         " tap gradients, got " + std::to_string(d_taps.size()));
  }
  BackboneGrads<T> out{BackboneParams<T>::zeros(config), {}};

  auto tap_slot = [&](std::size_t stage_output) -> const FeatureMap<T>* {
    for (std::size_t i = 0; i < config.taps.size(); ++i) {
      if (config.taps[i] == stage_output) return &d_taps[i];
    }
    return nullptr;
  };
  auto add = [](FeatureMap<T>& dst, const FeatureMap<T>& src) {
    if (!dst.same_shape(src)) {
      throw DimensionError("backbone_backward: tap gradient shape " + src.shape_string() +
                           " does not match " + dst.shape_string());
    }
    auto d = dst.values();
    auto s = src.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
  };

  const std::size_t needed = cache.stages.size();
  FeatureMap<T> grad;
  for (std::size_t s = needed; s-- > 0;) {
    auto& st = cache.stages[s];
    FeatureMap<T> d_out(st.pool.output.height(), st.pool.output.width(), st.pool.output.channels());
    if (!grad.empty()) add(d_out, grad);
    if (const FeatureMap<T>* d = tap_slot(s + 1)) add(d_out, *d);
    const FeatureMap<T> d_pre = relu_backward(st.pre, maxpool2d_backward(st.pool, d_out));
    Conv2dGrads<T> g = conv2d_backward(st.conv, d_pre);
    out.d_params.kernels[s] = std::move(g.d_kernel);
    out.d_params.biases[s] = std::move(g.d_bias);
    grad = std::move(g.d_input);
  }
  if (grad.empty()) {
    grad = FeatureMap<T>(cache.in_height, cache.in_width, config.input_channels);
  }
  if (const FeatureMap<T>* d = tap_slot(0)) add(grad, *d);
  out.d_image = std::move(grad);
  cache.live = false;
  return out;
}

#define MLCRNN_INSTANTIATE_BACKBONE(T)                                                            \
  template struct BackboneParams<T>;                                                              \
  template std::vector<FeatureMap<T>> backbone_forward<T>(const FeatureMap<T>&,                   \
                                                          const BackboneConfig&,                  \
                                                          const BackboneParams<T>&,               \
                                                          BackboneCache<T>*);                     \
  template BackboneGrads<T> backbone_backward<T>(BackboneCache<T>&,                                \
                                                 const std::vector<FeatureMap<T>>&);

MLCRNN_INSTANTIATE_BACKBONE(float)
MLCRNN_INSTANTIATE_BACKBONE(double)

}  // namespace mlcrnn
