#include "mlcrnn/fusion.hpp"

#include <algorithm>

namespace mlcrnn {

namespace {

template <typename T>
void check_levels(std::span<const FeatureMap<T>> levels, const char* op) {
  if (levels.empty()) throw DimensionError(std::string(op) + ": at least one level is required");
  for (const auto& l : levels) {
    if (!l.same_shape(levels[0])) {
      throw DimensionError(std::string(op) + ": level maps differ in shape (" +
                           levels[0].shape_string() + " vs " + l.shape_string() + ")");
    }
  }
}

}  // namespace

std::string_view fusion_mode_name(FusionMode mode) {
  switch (mode) {
    case FusionMode::kAttention: return "attention";
    case FusionMode::kAverage: return "average";
    case FusionMode::kMax: return "max";
  }
  return "?";
}

FusionMode parse_fusion_mode(std::string_view text) {
  if (text == "attention" || text == "att") return FusionMode::kAttention;
  if (text == "average" || text == "avg") return FusionMode::kAverage;
  if (text == "max") return FusionMode::kMax;
  throw ParseError("unknown fusion mode '" + std::string(text) + "' (expected attention, average or max)");
}

template <typename T>
AttentionParams<T> AttentionParams<T>::zeros(std::size_t levels, std::size_t classes,
                                             std::size_t filters) {
  return {ConvKernel<T>(3, 3, levels * classes, filters), Vector<T>(filters, T(0)),
          ConvKernel<T>(1, 1, filters, levels), Vector<T>(levels, T(0))};
}

template <typename T>
FeatureMap<T> combine_levels(std::span<const FeatureMap<T>> levels, const FeatureMap<T>& weights) {
  check_levels(levels, "combine_levels");
  const std::size_t q_count = levels.size();
  const std::size_t h = levels[0].height(), w = levels[0].width(), c = levels[0].channels();
  if (weights.height() != h || weights.width() != w || weights.channels() != q_count) {
    throw DimensionError("combine_levels: weight map " + weights.shape_string() +
                         " does not match levels");
  }
  FeatureMap<T> z(h, w, c);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t col = 0; col < w; ++col) {
      const auto om = weights.pixel(r, col);
      auto out = z.pixel(r, col);
      for (std::size_t q = 0; q < q_count; ++q) {
        const auto f = levels[q].pixel(r, col);
        for (std::size_t k = 0; k < c; ++k) out[k] += om[q] * f[k];
      }
    }
  }
  return z;
}

template <typename T>
FusionOutput<T> fuse_attention(std::span<const FeatureMap<T>> levels, const AttentionParams<T>& params,
                               AttentionCache<T>* cache) {
  check_levels(levels, "fuse_attention");
  const std::size_t q_count = levels.size();
  if (params.levels() != q_count || params.conv1.in_channels() != q_count * levels[0].channels()) {
    throw DimensionError("fuse_attention: attention model expects " +
                         std::to_string(params.levels()) + " levels of " +
                         std::to_string(params.conv1.in_channels() / std::max<std::size_t>(params.levels(), 1)) +
                         " classes");
  }
  const FeatureMap<T> stacked = concat_channels(levels);
  Conv2dCache<T> c1, c2;
  FeatureMap<T> pre = conv2d<T>(stacked, params.conv1, params.bias1, 1, cache ? &c1 : nullptr);
  FeatureMap<T> scores = conv2d<T>(relu(pre), params.conv2, params.bias2, 0, cache ? &c2 : nullptr);
  FeatureMap<T> weights = softmax_channels(scores);

  FusionOutput<T> out{FusionMode::kAttention, combine_levels(levels, weights), weights, scores};
  if (cache != nullptr) {
    cache->params = &params;
    cache->levels.assign(levels.begin(), levels.end());
    cache->conv1 = std::move(c1);
    cache->conv2 = std::move(c2);
    cache->hidden_pre = std::move(pre);
    cache->weights = std::move(weights);
    cache->live = true;
  }
  return out;
}

template <typename T>
AttentionGrads<T> fuse_attention_backward(AttentionCache<T>& cache, const FeatureMap<T>& d_fused) {
  if (!cache.live || cache.params == nullptr) {
    throw StateError("fuse_attention_backward: cache is stale or was never filled");
  }
  const auto& levels = cache.levels;
  const std::size_t q_count = levels.size();
  if (!d_fused.same_shape(levels[0])) {
    throw DimensionError("fuse_attention_backward: dZ shape " + d_fused.shape_string() +
                         " does not match fused map " + levels[0].shape_string());
  }
  const std::size_t h = d_fused.height(), w = d_fused.width(), c = d_fused.channels();
  const FeatureMap<T>& om = cache.weights;

  AttentionGrads<T> g;
  g.d_levels.assign(q_count, FeatureMap<T>(h, w, c));
  FeatureMap<T> d_scores(h, w, q_count);
  std::vector<T> d_om(q_count);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t col = 0; col < w; ++col) {
      const auto dz = d_fused.pixel(r, col);
      const auto wq = om.pixel(r, col);
      T dot = T(0);
      for (std::size_t q = 0; q < q_count; ++q) {
        const auto f = levels[q].pixel(r, col);
        auto df = g.d_levels[q].pixel(r, col);
        T s = T(0);
        for (std::size_t k = 0; k < c; ++k) {
          s += dz[k] * f[k];
          df[k] = wq[q] * dz[k];
        }
        d_om[q] = s;
        dot += wq[q] * s;
      }
      auto ds = d_scores.pixel(r, col);
      for (std::size_t q = 0; q < q_count; ++q) ds[q] = wq[q] * (d_om[q] - dot);
    }
  }

  Conv2dGrads<T> g2 = conv2d_backward(cache.conv2, d_scores);
  Conv2dGrads<T> g1 = conv2d_backward(cache.conv1, relu_backward(cache.hidden_pre, g2.d_input));
  g.d_params = {std::move(g1.d_kernel), std::move(g1.d_bias), std::move(g2.d_kernel),
                std::move(g2.d_bias)};
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t col = 0; col < w; ++col) {
      const auto dx = g1.d_input.pixel(r, col);
      for (std::size_t q = 0; q < q_count; ++q) {
        auto df = g.d_levels[q].pixel(r, col);
        for (std::size_t k = 0; k < c; ++k) df[k] += dx[q * c + k];
      }
    }
  }
  cache.live = false;
  return g;
}

template <typename T>
FusionOutput<T> fuse_average(std::span<const FeatureMap<T>> levels, BaselineRecord* record) {
  check_levels(levels, "fuse_average");
  const std::size_t q_count = levels.size();
  FeatureMap<T> weights(levels[0].height(), levels[0].width(), q_count,
                        T(1) / static_cast<T>(q_count));
  FusionOutput<T> out{FusionMode::kAverage, combine_levels(levels, weights), weights, {}};
  if (record != nullptr) {
    *record = {FusionMode::kAverage, {}, q_count, levels[0].height(), levels[0].width(),
               levels[0].channels()};
  }
  return out;
}

template <typename T>
FusionOutput<T> fuse_max(std::span<const FeatureMap<T>> levels, BaselineRecord* record) {
  check_levels(levels, "fuse_max");
  const std::size_t q_count = levels.size();
  FeatureMap<T> z = levels[0];
  std::vector<std::size_t> arg(z.size(), 0);
  for (std::size_t q = 1; q < q_count; ++q) {
    const auto f = levels[q].values();
    auto zv = z.values();
    for (std::size_t i = 0; i < zv.size(); ++i) {
      if (f[i] > zv[i]) {
        zv[i] = f[i];
        arg[i] = q;
      }
    }
  }
  if (record != nullptr) {
    *record = {FusionMode::kMax, std::move(arg), q_count, z.height(), z.width(), z.channels()};
  }
  return {FusionMode::kMax, std::move(z), {}, {}};
}

template <typename T>
std::vector<FeatureMap<T>> fuse_baseline_backward(FusionMode mode, const BaselineRecord& record,
                                                  const FeatureMap<T>& d_fused) {
  if (mode == FusionMode::kAttention) {
    throw StateError("fuse_baseline_backward: attention mode has its own backward");
  }
  if (record.levels == 0 || record.mode != mode ||
      (mode == FusionMode::kMax && record.argmax_level.size() != d_fused.size())) {
    throw StateError("fuse_baseline_backward: record is stale or belongs to another mode");
  }
  if (d_fused.height() != record.height || d_fused.width() != record.width ||
      d_fused.channels() != record.channels) {
    throw DimensionError("fuse_baseline_backward: dZ shape " + d_fused.shape_string() +
                         " does not match the fused map");
  }
  std::vector<FeatureMap<T>> d_levels(record.levels,
                                      FeatureMap<T>(record.height, record.width, record.channels));
  const auto dz = d_fused.values();
  if (mode == FusionMode::kAverage) {
    const T scale = T(1) / static_cast<T>(record.levels);
    for (auto& d : d_levels) {
      auto dv = d.values();
      for (std::size_t i = 0; i < dv.size(); ++i) dv[i] = scale * dz[i];
    }
  } else {
    for (std::size_t i = 0; i < dz.size(); ++i) d_levels[record.argmax_level[i]].values()[i] = dz[i];
  }
  return d_levels;
}

#define MLCRNN_INSTANTIATE_FUSION(T)                                                              \
  template struct AttentionParams<T>;                                                             \
  template FeatureMap<T> combine_levels<T>(std::span<const FeatureMap<T>>, const FeatureMap<T>&); \
  template FusionOutput<T> fuse_attention<T>(std::span<const FeatureMap<T>>,                      \
                                             const AttentionParams<T>&, AttentionCache<T>*);      \
  template AttentionGrads<T> fuse_attention_backward<T>(AttentionCache<T>&, const FeatureMap<T>&); \
  template FusionOutput<T> fuse_average<T>(std::span<const FeatureMap<T>>, BaselineRecord*);      \
  template FusionOutput<T> fuse_max<T>(std::span<const FeatureMap<T>>, BaselineRecord*);          \
  template std::vector<FeatureMap<T>> fuse_baseline_backward<T>(FusionMode, const BaselineRecord&, \
                                                                const FeatureMap<T>&);

MLCRNN_INSTANTIATE_FUSION(float)
MLCRNN_INSTANTIATE_FUSION(double)

}  // namespace mlcrnn
