#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mlcrnn/config.hpp"
#include "mlcrnn/image_io.hpp"
#include "mlcrnn/metrics.hpp"
#include "mlcrnn/training.hpp"

namespace mlcrnn {

using Color = std::array<std::uint8_t, 3>;

struct SamplePaths {
  std::filesystem::path image;
  std::filesystem::path labels;
};

/// Class names, one palette color per class, and image/label file pairs.
/// Relative pair paths are resolved against the manifest's directory.
struct DatasetManifest {
  std::vector<std::string> classes;
  std::vector<Color> palette;
  std::vector<SamplePaths> pairs;

  std::size_t class_count() const { return classes.size(); }
  /// Palette size must equal the class count and colors must be distinct.
  void validate() const;
};

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

struct LabeledSample {
  FeatureMap<double> image;  // values in [0, 1]
  LabelMap labels;
  std::string id;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<LabeledSample> samples;
};

/// Single-channel 8-bit label image; values must be < class_count or kIgnoreLabel.
LabelMap read_label_map(const std::filesystem::path& path, std::size_t class_count);
void write_label_map(const std::filesystem::path& path, const LabelMap& labels);

Dataset load_dataset(const std::filesystem::path& manifest_path);
/// Writes images/NNNN.png, labels/NNNN.png and manifest.json under `dir` and
/// returns the manifest with the new pairs.
DatasetManifest save_dataset(const std::filesystem::path& dir, const Dataset& dataset);

enum class SyntheticKind { kLongRange, kMultiScale };
SyntheticKind parse_synthetic_kind(std::string_view text);
std::string_view synthetic_kind_name(SyntheticKind kind);

/// Deterministic synthetic scene-labeling sets (RGB images).
///
/// longrange: three classes. A central square of gray noise sits on a dark
/// flat background and a small red or blue cue occupies one corner. The
/// region is labeled 1 for a red cue and 2 for a blue one. Samples come in
/// pairs that share texture and cue corner and differ only in cue color.
///
/// multiscale: four classes. Gray-noise discs of three radii an octave apart
/// on a dark noisy background; the class of a disc is its size.
///
/// size must be at least 24 and divisible by 8.
Dataset generate_synthetic(SyntheticKind kind, std::size_t count, std::size_t size, std::uint64_t seed);

/// Pixels of the longrange texture region, i.e. those with a nonzero label.
double foreground_accuracy(const ConfusionMatrix& confusion, std::size_t background = 0);

/// Converts images to the model precision and attaches topic descriptors.
template <typename T>
std::vector<TrainingSample<T>> make_training_samples(std::span<const LabeledSample> samples,
                                                     const ModelConfig& config);

template <typename T>
struct Prediction {
  LabelMap labels;
  FeatureMap<T> probs;
  /// Attention (or uniform average) weights per level; empty in max mode.
  FeatureMap<T> weights;
};

template <typename T>
Prediction<T> predict(const ModelConfig& config, const ModelParams<T>& params, const FeatureMap<T>& image,
                      std::span<const T> topic);

struct Evaluation {
  MetricsReport metrics;
  double foreground_accuracy = 0.0;
  double mean_loss = 0.0;
};

/// Runs the model over every sample and accumulates one confusion matrix.
/// An empty sample set raises DimensionError.
template <typename T>
Evaluation evaluate(const ModelConfig& config, const ModelParams<T>& params,
                    std::span<const TrainingSample<T>> samples);

Image8 colorize_labels(const LabelMap& labels, std::span<const Color> palette);
/// Inverse of colorize_labels; colors outside the palette raise IoError.
LabelMap decode_palette_image(const Image8& image, std::span<const Color> palette);

/// Writes <stem>_labels.png (palette colors) and, when requested and present,
/// <stem>_weight<q>.png per level with omega scaled linearly from [0, 1].
template <typename T>
std::vector<std::filesystem::path> export_prediction(const Prediction<T>& prediction,
                                                     std::span<const Color> palette,
                                                     const std::filesystem::path& dir, const std::string& stem,
                                                     bool weight_maps = true);

struct FusionResult {
  FusionMode mode = FusionMode::kAttention;
  Evaluation train;
  Evaluation test;
  double final_loss = 0.0;
};

/// Trains one model per fusion mode from the same initial seed and evaluates
/// each on the train and test sets.
template <typename T>
std::vector<FusionResult> compare_fusion(const RunConfig& config, std::span<const TrainingSample<T>> train_set,
                                         std::span<const TrainingSample<T>> test_set,
                                         std::span<const FusionMode> modes,
                                         const std::function<void(FusionMode, const EpochLog&)>& on_epoch = {});

struct FusionSeedResults {
  std::uint64_t seed = 0;
  std::vector<FusionResult> results;
};

struct FusionOrdering {
  std::size_t seeds = 0;
  std::size_t attention_ge_average = 0;
  std::size_t average_ge_max = 0;
};

/// Counts seeds where test pixel accuracy orders attention >= average and
/// average >= max. Seeds missing a mode are skipped.
FusionOrdering count_fusion_ordering(std::span<const FusionSeedResults> runs);

/// One row per seed and mode (train/test pixel and class accuracy, final
/// loss), then per-mode means and the ordering counts.
std::string format_fusion_table(std::span<const FusionSeedResults> runs);

/// Uniform [0, 1) image of the configured channel count with uniform random
/// labels and its topic descriptor, for gradient checks.
TrainingSample<double> random_check_sample(const ModelConfig& config, std::size_t size, std::uint64_t seed);

}  // namespace mlcrnn
