#include "mlcrnn/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "mlcrnn/serialize.hpp"

namespace mlcrnn {

CrnnDims ModelConfig::level_dims(std::size_t level) const {
  const std::size_t in = backbone.tap_channels(level);
  CrnnDims d;
  d.input_dim = in;
  d.hidden_dim = hidden_dims.empty() ? in : hidden_dims.at(level);
  d.class_count = class_count;
  d.global_dim = global_context ? 9 * in : 0;
  d.topic_dim = topic_dim();
  return d;
}

void ModelConfig::validate() const {
  backbone.validate();
  if (class_count == 0 || class_count >= kIgnoreLabel) {
    throw DimensionError("model: class count must be in [1, 254], got " + std::to_string(class_count));
  }
  if (!hidden_dims.empty() && hidden_dims.size() != level_count()) {
    throw DimensionError("model: " + std::to_string(hidden_dims.size()) + " hidden sizes given for " +
                         std::to_string(level_count()) + " levels");
  }
  for (std::size_t h : hidden_dims) {
    if (h == 0) throw DimensionError("model: hidden sizes must be positive");
  }
  if (fusion == FusionMode::kAttention && attention_filters == 0) {
    throw DimensionError("model: attention filter count must be positive");
  }
  if (topic_context && (topic.scales.empty() || topic.orientations == 0 || topic.grid == 0)) {
    throw DimensionError("model: topic descriptor configuration is empty");
  }
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  p.backbone = BackboneParams<T>::zeros(config.backbone);
  for (std::size_t q = 0; q < config.level_count(); ++q) {
    p.levels.push_back(CrnnParams<T>::zeros(config.level_dims(q)));
  }
  if (config.fusion == FusionMode::kAttention) {
    p.attention = AttentionParams<T>::zeros(config.level_count(), config.class_count,
                                            config.attention_filters);
  }
  return p;
}

template <typename T>
std::vector<ParamBlock<T>> ModelParams<T>::blocks() {
  std::vector<ParamBlock<T>> out;
  for_each([&](const std::string& name, const std::vector<std::size_t>& shape, std::span<T> v) {
    out.push_back({name, shape, v});
  });
  return out;
}

template <typename T>
std::vector<ParamBlock<const T>> ModelParams<T>::blocks() const {
  std::vector<ParamBlock<const T>> out;
  for_each([&](const std::string& name, const std::vector<std::size_t>& shape, std::span<const T> v) {
    out.push_back({name, shape, v});
  });
  return out;
}

template <typename T>
std::size_t ModelParams<T>::scalar_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const std::vector<std::size_t>&, std::span<const T> v) {
    n += v.size();
  });
  return n;
}

std::string parameter_family(const std::string& name) {
  std::string out;
  int depth = 0;
  for (char ch : name) {
    if (ch == '[') {
      ++depth;
    } else if (ch == ']') {
      --depth;
    } else if (depth == 0) {
      out += ch;
    }
  }
  return out;
}

std::string parameter_kind(const std::string& name) {
  std::string family = parameter_family(name);
  if (family.rfind("level", 0) == 0) {
    std::size_t i = 5;
    while (i < family.size() && std::isdigit(static_cast<unsigned char>(family[i]))) ++i;
    if (i > 5 && i < family.size() && family[i] == '.') return family.substr(i + 1);
  }
  return family;
}

template <typename T>
void cap_recurrent_norm(std::array<Matrix<T>, 3>& w, double cap) {
  const std::size_t d = w[0].rows();
  if (d == 0) return;
  std::vector<double> sum(d * d, 0.0);
  for (const auto& m : w) {
    for (std::size_t i = 0; i < d * d; ++i) sum[i] += static_cast<double>(m.values()[i]);
  }
  // Power iteration on S^T S.
  std::vector<double> v(d, 1.0 / std::sqrt(static_cast<double>(d))), u(d), next(d);
  double sigma = 0.0;
  for (int it = 0; it < 200; ++it) {
    for (std::size_t r = 0; r < d; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += sum[r * d + c] * v[c];
      u[r] = acc;
    }
    for (std::size_t c = 0; c < d; ++c) {
      double acc = 0.0;
      for (std::size_t r = 0; r < d; ++r) acc += sum[r * d + c] * u[r];
      next[c] = acc;
    }
    double norm = 0.0;
    for (double x : next) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) return;
    for (std::size_t c = 0; c < d; ++c) v[c] = next[c] / norm;
    const double estimate = std::sqrt(norm);
    if (std::abs(estimate - sigma) <= 1e-12 * estimate) {
      sigma = estimate;
      break;
    }
    sigma = estimate;
  }
  if (sigma <= cap) return;
  const double scale = cap / sigma;
  for (auto& m : w) {
    for (T& x : m.values()) x = static_cast<T>(static_cast<double>(x) * scale);
  }
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams<T> p = ModelParams<T>::zeros(config);
  std::mt19937_64 rng(seed);
  for (auto& block : p.blocks()) {
    const auto& s = block.shape;
    if (s.size() < 2 || block.values.empty()) continue;
    double fan_in = 0.0, fan_out = 0.0;
    if (s.size() == 2) {
      fan_in = static_cast<double>(s[1]);
      fan_out = static_cast<double>(s[0]);
    } else {
      const double area = static_cast<double>(s[0] * s[1]);
      fan_in = area * static_cast<double>(s[2]);
      fan_out = area * static_cast<double>(s[3]);
    }
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (T& v : block.values) v = static_cast<T>(dist(rng));
  }
  if (config.recurrent_norm_cap > 0.0) {
    for (auto& level : p.levels) {
      for (auto& dag : level.dags) cap_recurrent_norm(dag.recurrent, config.recurrent_norm_cap);
    }
  }
  return p;
}

template <typename T>
void zero_kinds(ModelParams<T>& params, const std::vector<std::string>& kinds) {
  for (auto& block : params.blocks()) {
    if (std::find(kinds.begin(), kinds.end(), parameter_kind(block.name)) != kinds.end()) {
      std::fill(block.values.begin(), block.values.end(), T(0));
    }
  }
}

template <typename T>
ModelOutput<T> model_forward(const ModelConfig& config, const ModelParams<T>& params,
                             const FeatureMap<T>& image, std::span<const T> topic, ModelCache<T>* cache) {
  config.validate();
  const std::size_t q_count = config.level_count();
  if (params.levels.size() != q_count) {
    throw DimensionError("model_forward: parameters hold " + std::to_string(params.levels.size()) +
                         " levels, config has " + std::to_string(q_count));
  }
  if (topic.size() != config.topic_dim()) {
    throw DimensionError("model_forward: topic descriptor has " + std::to_string(topic.size()) +
                         " values, expected " + std::to_string(config.topic_dim()));
  }
  if (config.fusion == FusionMode::kAttention && !params.attention) {
    throw DimensionError("model_forward: attention fusion requires attention parameters");
  }

  const std::vector<FeatureMap<T>> taps =
      backbone_forward(image, config.backbone, params.backbone, cache ? &cache->backbone : nullptr);

  std::vector<std::array<DagPlan, 4>> local_plans;
  std::vector<std::array<DagPlan, 4>>& plans = cache ? cache->plans : local_plans;
  plans.clear();
  plans.reserve(q_count);
  if (cache != nullptr) {
    cache->globals.assign(q_count, {});
    cache->crnn.assign(q_count, {});
    cache->level_sizes.assign(q_count, {});
  }

  ModelOutput<T> out;
  for (std::size_t q = 0; q < q_count; ++q) {
    const FeatureMap<T>& tap = taps[q];
    if (config.global_context && (tap.height() < 3 || tap.width() < 3)) {
      throw DimensionError("model_forward: level " + std::to_string(q + 1) + " map is " +
                           std::to_string(tap.height()) + "x" + std::to_string(tap.width()) +
                           "; global context needs at least 3x3 (use a larger image)");
    }
    plans.push_back(build_dag_plans(tap.height(), tap.width()));
    GlobalFeature<T> gf;
    if (config.global_context) gf = global_feature(tap);
    const FeatureMap<T> scores =
        crnn_forward<T>(tap, plans.back(), params.levels[q], std::span<const T>(gf.values), topic,
                        cache ? &cache->crnn[q] : nullptr);
    out.level_scores.push_back(bilinear_upsample(scores, image.height(), image.width()));
    if (cache != nullptr) {
      cache->level_sizes[q] = {tap.height(), tap.width()};
      cache->globals[q] = std::move(gf);
    }
  }

  const std::span<const FeatureMap<T>> levels(out.level_scores);
  switch (config.fusion) {
    case FusionMode::kAttention:
      out.fusion = fuse_attention(levels, *params.attention, cache ? &cache->attention : nullptr);
      break;
    case FusionMode::kAverage:
      out.fusion = fuse_average(levels, cache ? &cache->baseline : nullptr);
      break;
    case FusionMode::kMax:
      out.fusion = fuse_max(levels, cache ? &cache->baseline : nullptr);
      break;
  }
  out.probs = softmax_channels(out.fusion.fused);
  if (cache != nullptr) {
    cache->mode = config.fusion;
    cache->height = image.height();
    cache->width = image.width();
    cache->live = true;
  }
  return out;
}

template <typename T>
ModelGrads<T> model_backward(const ModelConfig& config, ModelCache<T>& cache, const FeatureMap<T>& d_scores) {
  if (!cache.live) throw StateError("model_backward: cache is stale or was never filled");
  if (cache.mode != config.fusion || cache.crnn.size() != config.level_count()) {
    throw StateError("model_backward: cache was filled with a different model configuration");
  }
  if (d_scores.height() != cache.height || d_scores.width() != cache.width ||
      d_scores.channels() != config.class_count) {
    throw DimensionError("model_backward: score gradient " + d_scores.shape_string() +
                         " does not match the model output");
  }
  const std::size_t q_count = config.level_count();
  ModelGrads<T> out;
  std::vector<FeatureMap<T>> d_levels;
  if (cache.mode == FusionMode::kAttention) {
    AttentionGrads<T> ag = fuse_attention_backward(cache.attention, d_scores);
    d_levels = std::move(ag.d_levels);
    out.d_params.attention = std::move(ag.d_params);
  } else {
    d_levels = fuse_baseline_backward(cache.mode, cache.baseline, d_scores);
  }

  out.d_topic.assign(config.topic_dim(), T(0));
  std::vector<FeatureMap<T>> d_taps(q_count);
  for (std::size_t q = 0; q < q_count; ++q) {
    const auto [lh, lw] = cache.level_sizes[q];
    const FeatureMap<T> d_small = bilinear_upsample_backward(d_levels[q], lh, lw);
    CrnnBackwardResult<T> r = crnn_backward(cache.crnn[q], d_small);
    FeatureMap<T> d_tap = std::move(r.d_input);
    if (config.global_context) {
      const FeatureMap<T> dg = global_feature_backward(cache.globals[q], std::span<const T>(r.d_global));
      auto dst = d_tap.values();
      const auto src = dg.values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
    for (std::size_t i = 0; i < r.d_topic.size(); ++i) out.d_topic[i] += r.d_topic[i];
    out.d_params.levels.push_back(std::move(r.grads));
    d_taps[q] = std::move(d_tap);
  }
  BackboneGrads<T> bg = backbone_backward(cache.backbone, d_taps);
  out.d_params.backbone = std::move(bg.d_params);
  out.d_image = std::move(bg.d_image);
  cache.live = false;
  return out;
}

template <typename T>
LossReport<T> cross_entropy(const FeatureMap<T>& probs, const LabelMap& labels) {
  if (probs.empty() || probs.height() != labels.height || probs.width() != labels.width) {
    throw DimensionError("cross_entropy: label map " + std::to_string(labels.height) + "x" +
                         std::to_string(labels.width) + " does not match predictions " +
                         probs.shape_string());
  }
  const std::size_t c_count = probs.channels();
  LossReport<T> rep;
  rep.class_count = c_count;
  rep.d_scores = FeatureMap<T>(probs.height(), probs.width(), c_count);
  for (std::size_t r = 0; r < labels.height; ++r) {
    for (std::size_t c = 0; c < labels.width; ++c) {
      const std::uint8_t y = labels.at(r, c);
      if (y == kIgnoreLabel) continue;
      if (y >= c_count) {
        throw DimensionError("cross_entropy: label " + std::to_string(y) + " at (" + std::to_string(r) +
                             ", " + std::to_string(c) + ") is outside [0, " + std::to_string(c_count) +
                             ")");
      }
      ++rep.valid_pixels;
    }
  }
  if (rep.valid_pixels == 0) throw DegenerateInputError("cross_entropy: every pixel is ignored");

  const T inv_n = T(1) / static_cast<T>(rep.valid_pixels);
  // Neumaier summation: the naive running sum costs several ulps of the mean.
  double sum = 0.0, carry = 0.0;
  for (std::size_t r = 0; r < labels.height; ++r) {
    for (std::size_t c = 0; c < labels.width; ++c) {
      const std::uint8_t y = labels.at(r, c);
      if (y == kIgnoreLabel) continue;
      const auto p = probs.pixel(r, c);
      auto d = rep.d_scores.pixel(r, c);
      if (static_cast<double>(p[y]) < 1e-12) ++rep.clamped_pixels;
      const double term = -std::log(std::max(static_cast<double>(p[y]), 1e-12));
      const double t = sum + term;
      carry += std::abs(sum) >= std::abs(term) ? (sum - t) + term : (term - t) + sum;
      sum = t;
      for (std::size_t k = 0; k < c_count; ++k) d[k] = (p[k] - (k == y ? T(1) : T(0))) * inv_n;
    }
  }
  rep.loss = (sum + carry) / static_cast<double>(rep.valid_pixels);
  return rep;
}

template <typename T>
FullResult<T> forward_full(const ModelConfig& config, const ModelParams<T>& params, const FeatureMap<T>& image,
                           const LabelMap& labels, std::span<const T> topic, ModelCache<T>* cache) {
  if (labels.height != image.height() || labels.width != image.width()) {
    throw DimensionError("forward_full: label map " + std::to_string(labels.height) + "x" +
                         std::to_string(labels.width) + " does not match image " + image.shape_string());
  }
  FullResult<T> res;
  res.output = model_forward(config, params, image, topic, cache);
  res.loss = cross_entropy(res.output.probs, labels);
  return res;
}

double learning_rate_at(const OptimizerConfig& config, std::size_t epoch) {
  const std::size_t e = std::max<std::size_t>(epoch, 1);
  if (config.schedule == DecaySchedule::kStepwise) {
    const std::size_t block = std::max<std::size_t>(config.decay_after, 1);
    return config.learning_rate * std::pow(config.decay_rate, static_cast<double>((e - 1) / block));
  }
  if (e <= config.decay_after) return config.learning_rate;
  return config.learning_rate * std::pow(config.decay_rate, static_cast<double>(e - config.decay_after));
}

template <typename T>
OptimizerState<T> OptimizerState<T>::create(const ModelParams<T>& params, const OptimizerConfig& config) {
  OptimizerState s;
  s.config = config;
  for (const auto& b : params.blocks()) s.velocity.emplace_back(b.values.size(), T(0));
  return s;
}

template <typename T>
void sgd_step(ModelParams<T>& params, const ModelParams<T>& grads, OptimizerState<T>& state,
              const std::vector<std::string>& frozen) {
  auto pb = params.blocks();
  const auto gb = grads.blocks();
  if (pb.size() != gb.size()) {
    throw DimensionError("sgd_step: gradient has " + std::to_string(gb.size()) + " blocks, parameters " +
                         std::to_string(pb.size()));
  }
  if (state.velocity.empty()) state = OptimizerState<T>::create(params, state.config);
  if (state.velocity.size() != pb.size()) {
    throw DimensionError("sgd_step: optimizer state does not match the parameters");
  }
  std::vector<bool> active(pb.size());
  double norm_sq = 0.0;
  for (std::size_t i = 0; i < pb.size(); ++i) {
    if (pb[i].name != gb[i].name || pb[i].values.size() != gb[i].values.size() ||
        state.velocity[i].size() != pb[i].values.size()) {
      throw DimensionError("sgd_step: block '" + pb[i].name + "' does not match its gradient");
    }
    active[i] = std::find(frozen.begin(), frozen.end(), parameter_kind(pb[i].name)) == frozen.end();
    if (!active[i]) continue;
    for (std::size_t k = 0; k < gb[i].values.size(); ++k) {
      const T g = gb[i].values[k];
      if (!std::isfinite(g)) {
        throw TrainingError("non-finite gradient in parameter '" + pb[i].name + "' at index " +
                            std::to_string(k));
      }
      norm_sq += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  double scale = 1.0;
  if (state.config.clip_norm > 0.0) {
    const double norm = std::sqrt(norm_sq);
    if (norm > state.config.clip_norm) scale = state.config.clip_norm / norm;
  }
  const T eta = static_cast<T>(learning_rate_at(state.config, state.epoch) * scale);
  const T mu = static_cast<T>(state.config.momentum);
  for (std::size_t i = 0; i < pb.size(); ++i) {
    if (!active[i]) continue;
    auto& v = state.velocity[i];
    for (std::size_t k = 0; k < v.size(); ++k) {
      v[k] = mu * v[k] - eta * gb[i].values[k];
      pb[i].values[k] += v[k];
    }
  }
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

struct PatternHash {
  std::uint64_t h = 1469598103934665603ULL;
  void add(std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xff;
      h *= 1099511628211ULL;
    }
  }
  template <typename T>
  void signs(const FeatureMap<T>& pre) {
    std::uint64_t word = 0;
    std::size_t n = 0;
    for (const T v : pre.values()) {
      word = (word << 1) | (v > T(0) ? 1u : 0u);
      if (++n % 64 == 0) add(word), word = 0;
    }
    add(word);
    add(n);
  }
  void indices(const std::vector<std::size_t>& idx) {
    for (const auto i : idx) add(i);
    add(idx.size());
  }
};

}  // namespace

template <typename T>
std::uint64_t activation_pattern(const ModelCache<T>& cache) {
  if (!cache.live) throw StateError("activation_pattern: cache holds no forward pass");
  PatternHash hash;
  for (const auto& stage : cache.backbone.stages) {
    hash.signs(stage.pre);
    hash.indices(stage.pool.argmax);
  }
  for (const auto& g : cache.globals) hash.indices(g.argmax);
  for (const auto& level : cache.crnn) {
    for (const auto& state : level.states) hash.signs(state.pre);
  }
  if (cache.mode == FusionMode::kAttention) hash.signs(cache.attention.hidden_pre);
  if (cache.mode == FusionMode::kMax) hash.indices(cache.baseline.argmax_level);
  return hash.h;
}

GradCheckReport check_gradients(std::span<const CheckBlock> blocks, const std::function<double()>& loss,
                                const GradCheckOptions& options, const std::function<std::uint64_t()>& pattern) {
  GradCheckReport rep;
  std::map<std::string, std::size_t> family_index;
  std::mt19937_64 rng(options.seed);
  std::uint64_t base_pattern = 0;
  if (pattern) {
    loss();
    base_pattern = pattern();
  }
  for (const CheckBlock& block : blocks) {
    if (block.values.size() != block.analytic.size()) {
      throw DimensionError("check_gradients: block '" + block.name + "' has mismatched gradient size");
    }
    if (block.values.empty()) continue;
    std::vector<std::size_t> coords(block.values.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (!options.exhaustive && coords.size() > options.per_block) {
      std::vector<std::size_t> picked;
      std::sample(coords.begin(), coords.end(), std::back_inserter(picked), options.per_block, rng);
      coords = std::move(picked);
    }
    auto [it, inserted] = family_index.try_emplace(block.family, rep.families.size());
    if (inserted) {
      rep.families.emplace_back();
      rep.families.back().family = block.family;
    }
    for (std::size_t idx : coords) {
      const double orig = block.values[idx];
      // Returns the central difference and whether both probes kept the base pattern.
      auto probe = [&](double step) {
        const double up = orig + step;
        const double down = orig - step;
        block.values[idx] = up;
        const double lp = loss();
        bool smooth = !pattern || pattern() == base_pattern;
        block.values[idx] = down;
        const double lm = loss();
        smooth = smooth && (!pattern || pattern() == base_pattern);
        block.values[idx] = orig;
        return std::pair{(lp - lm) / (up - down), smooth};
      };
      const double analytic = block.analytic[idx];
      auto [numeric, smooth] = probe(options.step);
      const double fixed_err = relative_error(analytic, numeric);
      rep.fixed_step_max_rel_error = std::max(rep.fixed_step_max_rel_error, fixed_err);
      if (!smooth) {
        ++rep.kink_refined;
        for (double step = options.step / 10; step >= options.min_step && !smooth; step /= 10) {
          const auto [n, ok] = probe(step);
          if (ok) {
            numeric = n;
            smooth = true;
          }
        }
        if (!smooth) ++rep.kink_unresolved;
      }
      const double err = smooth ? relative_error(analytic, numeric) : fixed_err;
      FamilyCheck& fam = rep.families[it->second];
      ++fam.checked;
      ++rep.checked;
      if (fam.checked == 1 || err > fam.max_rel_error) {
        fam.max_rel_error = err;
        fam.worst_block = block.name;
        fam.worst_index = idx;
        fam.analytic = analytic;
        fam.numeric = numeric;
      }
      rep.max_rel_error = std::max(rep.max_rel_error, err);
    }
  }
  return rep;
}

GradCheckReport grad_check(const ModelConfig& config, const ModelParams<double>& params,
                           const FeatureMap<double>& image, const LabelMap& labels,
                           std::span<const double> topic, const GradCheckOptions& options) {
  ModelParams<double> p = params;
  FeatureMap<double> img = image;
  ModelCache<double> cache;
  const FullResult<double> full = forward_full(config, p, img, labels, topic, &cache);
  const ModelGrads<double> g = model_backward(config, cache, full.loss.d_scores);

  std::vector<CheckBlock> blocks;
  auto pb = p.blocks();
  const auto gb = g.d_params.blocks();
  if (pb.size() != gb.size()) throw StateError("grad_check: gradient layout differs from parameters");
  for (std::size_t i = 0; i < pb.size(); ++i) {
    blocks.push_back({pb[i].name, parameter_family(pb[i].name), pb[i].values, gb[i].values});
  }
  if (options.include_input) blocks.push_back({"input", "input", img.values(), g.d_image.values()});
  std::uint64_t last_pattern = 0;
  GradCheckReport rep = check_gradients(
      blocks,
      [&] {
        ModelCache<double> probe_cache;
        const FullResult<double> r = forward_full(config, p, img, labels, topic, &probe_cache);
        last_pattern = activation_pattern(probe_cache) ^ (r.loss.clamped_pixels * 0x9e3779b97f4a7c15ULL);
        return r.loss.loss;
      },
      options, [&] { return last_pattern; });
  rep.clamped_pixels = full.loss.clamped_pixels;
  return rep;
}

void append_epoch_log(const std::filesystem::path& path, const EpochLog& row) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot open epoch log '" + path.string() + "'");
  if (fresh) out << "epoch,loss,pixel_acc,class_acc,lr\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10) << row.epoch << ',' << row.loss
      << ',' << row.pixel_accuracy << ',' << row.class_accuracy << ',' << row.learning_rate << '\n';
}

namespace {

template <typename T>
void add_scaled(ModelParams<T>& dst, const ModelParams<T>& src, T scale) {
  auto d = dst.blocks();
  const auto s = src.blocks();
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t k = 0; k < d[i].values.size(); ++k) d[i].values[k] += scale * s[i].values[k];
  }
}

template <typename T>
void scale_all(ModelParams<T>& p, T scale) {
  for (auto& b : p.blocks()) {
    for (T& v : b.values) v *= scale;
  }
}

template <typename T>
void save_checkpoint(const TrainConfig& tc, const ModelParams<T>& params, std::size_t epoch) {
  std::ostringstream name;
  name << "epoch_" << std::setw(4) << std::setfill('0') << epoch << ".params";
  save_params<T>(tc.checkpoint_dir / name.str(), params);
}

}  // namespace

template <typename T>
TrainResult<T> train(const ModelConfig& config, ModelParams<T> params,
                     std::span<const TrainingSample<T>> samples, const TrainConfig& tc,
                     const std::function<void(const EpochLog&)>& on_epoch) {
  if (samples.empty()) throw DegenerateInputError("train: dataset is empty");
  config.validate();
  OptimizerState<T> state = OptimizerState<T>::create(params, tc.optimizer);
  std::mt19937_64 rng(tc.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = tc.batch_size == 0 ? samples.size() : std::min(tc.batch_size, samples.size());
  const bool checkpoints = tc.checkpoint_every > 0 && !tc.checkpoint_dir.empty();

  TrainResult<T> result;
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    state.epoch = epoch;
    if (tc.shuffle) std::shuffle(order.begin(), order.end(), rng);
    ConfusionMatrix confusion(config.class_count);
    // Indexed by sample so the epoch mean does not depend on the visiting order.
    std::vector<double> losses(samples.size(), 0.0);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(start + batch, order.size());
      ModelParams<T> acc;
      for (std::size_t k = start; k < end; ++k) {
        const TrainingSample<T>& s = samples[order[k]];
        ModelCache<T> cache;
        const FullResult<T> full =
            forward_full(config, params, s.image, s.labels, std::span<const T>(s.topic), &cache);
        losses[order[k]] = full.loss.loss;
        confusion.add(s.labels, argmax_labels(full.output.probs));
        ModelGrads<T> g = model_backward(config, cache, full.loss.d_scores);
        if (k == start) {
          acc = std::move(g.d_params);
        } else {
          add_scaled(acc, g.d_params, T(1));
        }
      }
      if (end - start > 1) scale_all(acc, T(1) / static_cast<T>(end - start));
      sgd_step(params, acc, state, tc.frozen);
    }
    const MetricsReport m = summarize(confusion);
    const double loss_sum = std::accumulate(losses.begin(), losses.end(), 0.0);
    const EpochLog row{epoch, loss_sum / static_cast<double>(samples.size()), m.pixel_accuracy,
                       m.class_accuracy, learning_rate_at(tc.optimizer, epoch)};
    result.log.push_back(row);
    if (!tc.log_path.empty()) append_epoch_log(tc.log_path, row);
    if (on_epoch) on_epoch(row);
    const bool stop = tc.target_loss > 0.0 && row.loss < tc.target_loss;
    if (checkpoints && (epoch % tc.checkpoint_every == 0 || epoch == tc.epochs || stop)) {
      save_checkpoint(tc, params, epoch);
    }
    if (stop) break;
  }
  result.params = std::move(params);
  return result;
}

#define MLCRNN_INSTANTIATE_TRAINING(T)                                                              \
  template struct ModelParams<T>;                                                                   \
  template struct OptimizerState<T>;                                                                \
  template ModelParams<T> init_params<T>(const ModelConfig&, std::uint64_t);                        \
  template void zero_kinds<T>(ModelParams<T>&, const std::vector<std::string>&);                    \
  template ModelOutput<T> model_forward<T>(const ModelConfig&, const ModelParams<T>&,               \
                                           const FeatureMap<T>&, std::span<const T>,               \
                                           ModelCache<T>*);                                         \
  template ModelGrads<T> model_backward<T>(const ModelConfig&, ModelCache<T>&, const FeatureMap<T>&); \
  template std::uint64_t activation_pattern<T>(const ModelCache<T>&);                                \
  template LossReport<T> cross_entropy<T>(const FeatureMap<T>&, const LabelMap&);                   \
  template FullResult<T> forward_full<T>(const ModelConfig&, const ModelParams<T>&,                 \
                                         const FeatureMap<T>&, const LabelMap&, std::span<const T>, \
                                         ModelCache<T>*);                                           \
  template void sgd_step<T>(ModelParams<T>&, const ModelParams<T>&, OptimizerState<T>&,             \
                            const std::vector<std::string>&);                                       \
  template TrainResult<T> train<T>(const ModelConfig&, ModelParams<T>,                              \
                                   std::span<const TrainingSample<T>>, const TrainConfig&,          \
                                   const std::function<void(const EpochLog&)>&);

MLCRNN_INSTANTIATE_TRAINING(float)
MLCRNN_INSTANTIATE_TRAINING(double)

}  // namespace mlcrnn
