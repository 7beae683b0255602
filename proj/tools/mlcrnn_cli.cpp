#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mlcrnn/config.hpp"
#include "mlcrnn/error.hpp"
#include "mlcrnn/pipeline.hpp"
#include "mlcrnn/serialize.hpp"

namespace fs = std::filesystem;
using namespace mlcrnn;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig resolve_config(const Common& common) {
  RunConfig cfg = common.config.empty() ? RunConfig{} : load_run_config(common.config);
  if (common.seed) {
    cfg.seed = *common.seed;
    cfg.train.seed = *common.seed;
  }
  return cfg;
}

void require_classes(const RunConfig& cfg, const DatasetManifest& manifest) {
  if (cfg.model.class_count != manifest.class_count()) {
    throw DimensionError("config has " + std::to_string(cfg.model.class_count) + " classes but the dataset has " +
                         std::to_string(manifest.class_count()));
  }
}

std::vector<Color> default_palette(std::size_t classes) {
  std::vector<Color> p;
  for (std::size_t k = 0; k < classes; ++k) {
    p.push_back(Color{static_cast<std::uint8_t>((k * 97) % 256), static_cast<std::uint8_t>((k * 57 + 40) % 256),
                      static_cast<std::uint8_t>((k * 151 + 80) % 256)});
  }
  return p;
}

void print_metrics(const Evaluation& e, const DatasetManifest& manifest) {
  std::printf("pixel accuracy: %.4f\nclass accuracy: %.4f\nmean loss: %.6f\n", e.metrics.pixel_accuracy,
              e.metrics.class_accuracy, e.mean_loss);
  for (std::size_t k = 0; k < e.metrics.per_class.size(); ++k) {
    const std::string name = k < manifest.classes.size() ? manifest.classes[k] : std::to_string(k);
    if (e.metrics.per_class[k] < 0) {
      std::printf("  %-16s absent\n", name.c_str());
    } else {
      std::printf("  %-16s %.4f\n", name.c_str(), e.metrics.per_class[k]);
    }
  }
}

template <typename T>
ModelParams<T> load_model(const RunConfig& cfg, const fs::path& path) {
  ModelParams<T> params = ModelParams<T>::zeros(cfg.model);
  load_params_into<T>(path, params);
  return params;
}

template <typename T>
int run_train(const RunConfig& cfg, const Dataset& data, const fs::path& out) {
  fs::create_directories(out);
  TrainConfig tc = cfg.train;
  tc.log_path = out / "train_log.csv";
  fs::remove(tc.log_path);
  if (tc.checkpoint_every > 0) tc.checkpoint_dir = out / "checkpoints";
  const auto samples = make_training_samples<T>(data.samples, cfg.model);
  ModelParams<T> init = init_params<T>(cfg.model, cfg.seed);
  zero_kinds(init, tc.frozen);
  TrainResult<T> result = train<T>(cfg.model, std::move(init), samples, tc, [](const EpochLog& row) {
    std::printf("epoch %zu  loss %.6f  pixel %.4f  class %.4f  lr %.3g\n", row.epoch, row.loss, row.pixel_accuracy,
                row.class_accuracy, row.learning_rate);
    std::fflush(stdout);
  });
  save_params<T>(out / "params.bin", result.params);
  std::ofstream(out / "config.json") << dump_run_config(cfg);
  std::printf("wrote %s\n", (out / "params.bin").string().c_str());
  return 0;
}

template <typename T>
int run_eval(const RunConfig& cfg, const Dataset& data, const fs::path& params_path) {
  const ModelParams<T> params = load_model<T>(cfg, params_path);
  const auto samples = make_training_samples<T>(data.samples, cfg.model);
  print_metrics(evaluate<T>(cfg.model, params, samples), data.manifest);
  return 0;
}

template <typename T>
int run_predict(const RunConfig& cfg, const fs::path& params_path, const fs::path& image_path,
                const std::vector<Color>& palette, const fs::path& out, bool weights) {
  const ModelParams<T> params = load_model<T>(cfg, params_path);
  const LabeledSample raw{image_to_map<double>(read_image(image_path)), {}, image_path.stem().string()};
  const auto sample = make_training_samples<T>(std::span(&raw, 1), cfg.model).front();
  const Prediction<T> p = predict<T>(cfg.model, params, sample.image, sample.topic);
  for (const auto& f : export_prediction(p, palette, out, raw.id, weights)) {
    std::printf("wrote %s\n", f.string().c_str());
  }
  return 0;
}

template <typename T>
int run_fusion_compare(const RunConfig& cfg, const Dataset& train_data, const Dataset* test_data,
                       std::size_t seeds) {
  const auto train_set = make_training_samples<T>(train_data.samples, cfg.model);
  const auto test_set = test_data ? make_training_samples<T>(test_data->samples, cfg.model) : train_set;
  const std::vector<FusionMode> modes{FusionMode::kAttention, FusionMode::kAverage, FusionMode::kMax};
  std::vector<FusionSeedResults> runs;
  for (std::size_t i = 0; i < seeds; ++i) {
    RunConfig c = cfg;
    c.seed = cfg.seed + i;
    c.train.seed = c.seed;
    runs.push_back({c.seed, compare_fusion<T>(c, train_set, test_set, modes)});
    std::fprintf(stderr, "seed %llu done\n", static_cast<unsigned long long>(c.seed));
  }
  std::fputs(format_fusion_table(runs).c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-level contextual DAG-RNN scene labeling"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub, bool out_required) {
    sub->add_option("--config", common.config, "JSON run configuration");
    sub->add_option("--seed", common.seed, "Override the configured seed");
    auto* o = sub->add_option("--out", common.out, "Output directory");
    if (out_required) o->required();
  };

  std::string kind;
  std::size_t count = 8, size = 32;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("kind", kind, "longrange or multiscale")->required();
  synth->add_option("--count", count, "Number of samples");
  synth->add_option("--size", size, "Image side length");
  add_common(synth, true);

  std::string data, test, params_path, image;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a dataset");
  add_common(train_cmd, true);
  train_cmd->add_option("--data", data, "Dataset manifest")->required();

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate trained parameters on a dataset");
  add_common(eval_cmd, false);
  eval_cmd->add_option("--data", data, "Dataset manifest")->required();
  eval_cmd->add_option("--params", params_path, "Parameter file")->required();

  bool no_weights = false;
  auto* predict_cmd = app.add_subcommand("predict", "Label one image and export maps");
  add_common(predict_cmd, true);
  predict_cmd->add_option("--params", params_path, "Parameter file")->required();
  predict_cmd->add_option("--image", image, "Input image")->required();
  predict_cmd->add_option("--data", data, "Dataset manifest supplying the palette");
  predict_cmd->add_flag("--no-weights", no_weights, "Skip the attention weight images");

  std::size_t per_block = 10;
  double tolerance = 1e-4, step = 1e-5;
  bool exhaustive = false;
  std::uint64_t image_seed = 1;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the full model");
  add_common(grad_cmd, false);
  std::size_t check_size = 16;
  grad_cmd->add_option("--size", check_size, "Image side length")->capture_default_str();
  grad_cmd->add_option("--image-seed", image_seed, "Seed of the random image and labels")->capture_default_str();
  grad_cmd->add_option("--per-block", per_block, "Coordinates per parameter block")->capture_default_str();
  grad_cmd->add_option("--step", step, "Central-difference step")->capture_default_str();
  grad_cmd->add_option("--tolerance", tolerance, "Maximum relative error")->capture_default_str();
  grad_cmd->add_flag("--exhaustive", exhaustive, "Check every coordinate");

  std::size_t seeds = 1;
  auto* fusion_cmd = app.add_subcommand("fusion-compare", "Train attention, average and max fusion and compare");
  add_common(fusion_cmd, false);
  fusion_cmd->add_option("--data", data, "Training dataset manifest")->required();
  fusion_cmd->add_option("--test", test, "Held-out dataset manifest (defaults to the training set)");
  fusion_cmd->add_option("--seeds", seeds, "Number of consecutive seeds")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) {
      const Dataset ds = generate_synthetic(parse_synthetic_kind(kind), count, size, common.seed.value_or(1));
      save_dataset(common.out, ds);
      std::printf("wrote %zu samples to %s\n", ds.samples.size(), common.out.c_str());
      return 0;
    }
    const RunConfig cfg = resolve_config(common);
    const bool single = cfg.precision == Precision::kSingle;
    if (train_cmd->parsed()) {
      const Dataset ds = load_dataset(data);
      require_classes(cfg, ds.manifest);
      return single ? run_train<float>(cfg, ds, common.out) : run_train<double>(cfg, ds, common.out);
    }
    if (eval_cmd->parsed()) {
      const Dataset ds = load_dataset(data);
      require_classes(cfg, ds.manifest);
      return single ? run_eval<float>(cfg, ds, params_path) : run_eval<double>(cfg, ds, params_path);
    }
    if (predict_cmd->parsed()) {
      std::vector<Color> palette = default_palette(cfg.model.class_count);
      if (!data.empty()) {
        const DatasetManifest m = load_manifest(data);
        require_classes(cfg, m);
        palette = m.palette;
      }
      return single ? run_predict<float>(cfg, params_path, image, palette, common.out, !no_weights)
                    : run_predict<double>(cfg, params_path, image, palette, common.out, !no_weights);
    }
    if (grad_cmd->parsed()) {
      const auto params = init_params<double>(cfg.model, cfg.seed);
      const auto sample = random_check_sample(cfg.model, check_size, image_seed);
      GradCheckOptions opt;
      opt.step = step;
      opt.per_block = per_block;
      opt.exhaustive = exhaustive;
      opt.seed = cfg.seed;
      const GradCheckReport report =
          grad_check(cfg.model, params, sample.image, sample.labels, std::span<const double>(sample.topic), opt);
      std::printf("%-24s %8s %12s  %s\n", "family", "checked", "max_rel", "worst");
      for (const auto& f : report.families) {
        std::printf("%-24s %8zu %12.3e  %s[%zu] analytic %.6e numeric %.6e\n", f.family.c_str(), f.checked,
                    f.max_rel_error, f.worst_block.c_str(), f.worst_index, f.analytic, f.numeric);
      }
      std::printf("coordinates checked: %zu\nclamped pixels: %zu\n", report.checked, report.clamped_pixels);
      std::printf("kink crossings re-probed: %zu (unresolved %zu)\n", report.kink_refined, report.kink_unresolved);
      std::printf("fixed-step max relative error: %.3e\nmax relative error: %.3e\n",
                  report.fixed_step_max_rel_error, report.max_rel_error);
      const bool ok = report.max_rel_error <= tolerance && report.clamped_pixels == 0;
      if (!ok) std::fprintf(stderr, "error: gradient check exceeded tolerance %.1e\n", tolerance);
      return ok ? 0 : 1;
    }
    if (fusion_cmd->parsed()) {
      const Dataset train_data = load_dataset(data);
      require_classes(cfg, train_data.manifest);
      std::optional<Dataset> test_data;
      if (!test.empty()) test_data = load_dataset(test);
      const Dataset* t = test_data ? &*test_data : nullptr;
      return single ? run_fusion_compare<float>(cfg, train_data, t, seeds)
                    : run_fusion_compare<double>(cfg, train_data, t, seeds);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
