#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mlcrnn/backbone.hpp"
#include "mlcrnn/context.hpp"
#include "mlcrnn/crnn.hpp"
#include "mlcrnn/fusion.hpp"
#include "mlcrnn/graph.hpp"
#include "mlcrnn/metrics.hpp"
#include "mlcrnn/tensor.hpp"

namespace mlcrnn {

/// Architecture of the full labeling model: backbone taps, one contextual
/// recurrent layer per tap, upsampling to image resolution, fusion, softmax.
struct ModelConfig {
  BackboneConfig backbone;
  std::size_t class_count = 4;
  /// Hidden size per level; empty means "tap channel count".
  std::vector<std::size_t> hidden_dims;
  bool global_context = true;
  bool topic_context = true;
  TopicConfig topic;
  FusionMode fusion = FusionMode::kAttention;
  std::size_t attention_filters = 64;
  /// At initialization the three recurrent matrices of each DAG are scaled
  /// down together until the spectral norm of their sum is at most this.
  /// 0 keeps the raw Glorot draw.
  double recurrent_norm_cap = 0.5;

  std::size_t level_count() const { return backbone.taps.size(); }
  std::size_t topic_dim() const { return topic_context ? topic.length() : 0; }
  CrnnDims level_dims(std::size_t level) const;
  void validate() const;
};

/// Named view of one parameter block.
template <typename T>
struct ParamBlock {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<T> values;
};

template <typename T>
struct ModelParams {
  BackboneParams<T> backbone;
  std::vector<CrnnParams<T>> levels;
  std::optional<AttentionParams<T>> attention;

  static ModelParams zeros(const ModelConfig& config);

  /// Every trainable block exactly once, in a fixed order. Level blocks are
  /// prefixed "level<q>." with q starting at 1.
  template <typename F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  std::vector<ParamBlock<T>> blocks();
  std::vector<ParamBlock<const T>> blocks() const;
  std::size_t scalar_count() const;

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    self.backbone.for_each(f);
    for (std::size_t q = 0; q < self.levels.size(); ++q) {
      const std::string prefix = "level" + std::to_string(q + 1) + ".";
      self.levels[q].for_each([&](const std::string& name, const std::vector<std::size_t>& shape,
                                  auto values) { f(prefix + name, shape, values); });
    }
    if (self.attention) self.attention->for_each(f);
  }
};

/// Block kind with the level prefix and bracket tags removed:
/// "level2.W[SE][1]" -> "W", "att.conv1" -> "att.conv1".
std::string parameter_kind(const std::string& name);
/// Block family used for reporting: bracket tags removed, level kept:
/// "level2.W[SE][1]" -> "level2.W".
std::string parameter_family(const std::string& name);

/// Glorot-uniform weights, zero biases, deterministic in `seed`. Recurrent
/// matrices are then capped as described by ModelConfig::recurrent_norm_cap.
template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed);

/// Zeroes every block whose kind is listed.
template <typename T>
void zero_kinds(ModelParams<T>& params, const std::vector<std::string>& kinds);

template <typename T>
struct ModelCache {
  BackboneCache<T> backbone;
  std::vector<std::array<DagPlan, 4>> plans;
  std::vector<GlobalFeature<T>> globals;
  std::vector<CrnnCache<T>> crnn;
  std::vector<std::array<std::size_t, 2>> level_sizes;
  FusionMode mode = FusionMode::kAttention;
  AttentionCache<T> attention;
  BaselineRecord baseline;
  std::size_t height = 0;
  std::size_t width = 0;
  bool live = false;
};

template <typename T>
struct ModelOutput {
  /// Per-level class scores upsampled to image resolution.
  std::vector<FeatureMap<T>> level_scores;
  /// Fused scores (pre-softmax) and attention weights.
  FusionOutput<T> fusion;
  FeatureMap<T> probs;
};

/// `topic` must hold config.topic_dim() values (the precomputed descriptor of
/// the same image). The referenced config and params must outlive the cache.
template <typename T>
ModelOutput<T> model_forward(const ModelConfig& config, const ModelParams<T>& params,
                             const FeatureMap<T>& image, std::span<const T> topic,
                             ModelCache<T>* cache = nullptr);

/// Fingerprint of every piecewise-linear branch a cached forward pass took:
/// ReLU signs, pooling and global-max winners, max-fusion winners.
template <typename T>
std::uint64_t activation_pattern(const ModelCache<T>& cache);

template <typename T>
struct ModelGrads {
  ModelParams<T> d_params;
  FeatureMap<T> d_image;
  /// Gradient wrt the topic descriptor; it is reported, never propagated.
  Vector<T> d_topic;
};

/// Backward from the gradient wrt the fused scores. Consumes the cache.
template <typename T>
ModelGrads<T> model_backward(const ModelConfig& config, ModelCache<T>& cache,
                             const FeatureMap<T>& d_scores);

template <typename T>
struct LossReport {
  double loss = 0.0;
  /// Gradient of the loss wrt the fused pre-softmax scores.
  FeatureMap<T> d_scores;
  std::size_t valid_pixels = 0;
  std::size_t class_count = 0;
  /// Valid pixels whose true-class probability hit the clamp. The gradient
  /// is that of the unclamped loss, so finite differences disagree there.
  std::size_t clamped_pixels = 0;
};

/// Mean of -log p(true class) over pixels whose label is not kIgnoreLabel;
/// probabilities are clamped below at 1e-12.
template <typename T>
LossReport<T> cross_entropy(const FeatureMap<T>& probs, const LabelMap& labels);

template <typename T>
struct FullResult {
  ModelOutput<T> output;
  LossReport<T> loss;
};

template <typename T>
FullResult<T> forward_full(const ModelConfig& config, const ModelParams<T>& params,
                           const FeatureMap<T>& image, const LabelMap& labels,
                           std::span<const T> topic, ModelCache<T>* cache = nullptr);

enum class DecaySchedule { kPerEpoch, kStepwise };

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double decay_rate = 0.9;
  /// Epochs at the base rate before decay starts.
  std::size_t decay_after = 10;
  /// kPerEpoch: rate^(epoch - decay_after) after the plateau.
  /// kStepwise: one factor of rate per completed block of decay_after epochs.
  DecaySchedule schedule = DecaySchedule::kPerEpoch;
  /// Global-norm clipping threshold; 0 disables.
  double clip_norm = 0.0;
};

/// Epochs are 1-based.
double learning_rate_at(const OptimizerConfig& config, std::size_t epoch);

template <typename T>
struct OptimizerState {
  OptimizerConfig config;
  std::vector<Vector<T>> velocity;
  std::size_t epoch = 1;

  static OptimizerState create(const ModelParams<T>& params, const OptimizerConfig& config);
};

/// v <- mu v - eta grad; w <- w + v. Blocks whose kind is in `frozen` are left
/// untouched. Throws TrainingError naming the first non-finite gradient.
template <typename T>
void sgd_step(ModelParams<T>& params, const ModelParams<T>& grads, OptimizerState<T>& state,
              const std::vector<std::string>& frozen = {});

struct GradCheckOptions {
  double step = 1e-5;
  /// Coordinates drawn per block when not exhaustive.
  std::size_t per_block = 6;
  bool exhaustive = false;
  bool include_input = true;
  std::uint64_t seed = 1;
  /// When a probe changes the activation pattern, the step is divided by 10
  /// until both probes keep the base pattern, down to this step.
  double min_step = 1e-9;
};

struct FamilyCheck {
  std::string family;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst_block;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<FamilyCheck> families;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates whose fixed-step probes crossed a kink and were re-probed.
  std::size_t kink_refined = 0;
  /// Kinks that persisted down to min_step; their fixed-step error is kept.
  std::size_t kink_unresolved = 0;
  /// Maximum over all coordinates at the fixed step, before refinement.
  double fixed_step_max_rel_error = 0.0;
  /// From the unperturbed evaluation; nonzero voids the comparison there.
  std::size_t clamped_pixels = 0;
};

/// |a - n| / max(|a|, |n|, 1e-8).
double relative_error(double analytic, double numeric);

/// A block of inputs to perturb, with its analytic gradient.
struct CheckBlock {
  std::string name;
  std::string family;
  std::span<double> values;
  std::span<const double> analytic;
};

/// Central differences of `loss` against each block's analytic gradient.
/// Values are restored after every probe. `pattern`, when given, returns the
/// activation pattern of the most recent loss() call.
GradCheckReport check_gradients(std::span<const CheckBlock> blocks, const std::function<double()>& loss,
                                const GradCheckOptions& options,
                                const std::function<std::uint64_t()>& pattern = {});

/// End-to-end check of model_backward + cross_entropy on one sample.
GradCheckReport grad_check(const ModelConfig& config, const ModelParams<double>& params,
                           const FeatureMap<double>& image, const LabelMap& labels,
                           std::span<const double> topic, const GradCheckOptions& options = {});

template <typename T>
struct TrainingSample {
  FeatureMap<T> image;
  LabelMap labels;
  Vector<T> topic;
  std::string id;
};

struct TrainConfig {
  OptimizerConfig optimizer;
  std::size_t epochs = 60;
  /// Samples per update; 0 means the whole dataset. Batch gradients are averaged.
  std::size_t batch_size = 1;
  std::uint64_t seed = 1;
  bool shuffle = true;
  /// Parameter kinds held fixed (see parameter_kind).
  std::vector<std::string> frozen;
  /// Stop after the first epoch whose mean loss falls below this; 0 disables.
  double target_loss = 0.0;
  std::filesystem::path log_path;
  std::filesystem::path checkpoint_dir;
  /// Save a checkpoint every N epochs (and after the last); 0 disables.
  std::size_t checkpoint_every = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double pixel_accuracy = 0.0;
  double class_accuracy = 0.0;
  double learning_rate = 0.0;
};

template <typename T>
struct TrainResult {
  ModelParams<T> params;
  std::vector<EpochLog> log;
};

/// Shuffled minibatch SGD. Epoch rows report the mean loss and the accuracies
/// of the forward passes made during that epoch.
template <typename T>
TrainResult<T> train(const ModelConfig& config, ModelParams<T> params,
                     std::span<const TrainingSample<T>> samples, const TrainConfig& train_config,
                     const std::function<void(const EpochLog&)>& on_epoch = {});

/// Appends one row, writing the header first if the file is new or empty.
void append_epoch_log(const std::filesystem::path& path, const EpochLog& row);

}  // namespace mlcrnn
