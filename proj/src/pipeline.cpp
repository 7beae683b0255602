#include "mlcrnn/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "mlcrnn/error.hpp"

namespace mlcrnn {

namespace fs = std::filesystem;
using nlohmann::json;

void DatasetManifest::validate() const {
  if (classes.empty()) throw DimensionError("dataset manifest lists no classes");
  if (classes.size() > kIgnoreLabel) throw DimensionError("dataset manifest lists more than 255 classes");
  if (palette.size() != classes.size()) {
    throw DimensionError("palette has " + std::to_string(palette.size()) + " colors for " +
                         std::to_string(classes.size()) + " classes");
  }
  std::set<Color> seen;
  for (std::size_t k = 0; k < palette.size(); ++k) {
    if (!seen.insert(palette[k]).second) {
      throw DimensionError("palette color of class '" + classes[k] + "' repeats an earlier class");
    }
  }
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  DatasetManifest m;
  try {
    const json doc = json::parse(buf.str());
    for (const auto& key : doc.items()) {
      if (key.key() != "classes" && key.key() != "palette" && key.key() != "pairs") {
        throw ParseError("unknown key '" + key.key() + "'");
      }
    }
    m.classes = doc.at("classes").get<std::vector<std::string>>();
    for (const auto& c : doc.at("palette")) {
      const auto rgb = c.get<std::vector<int>>();
      if (rgb.size() != 3) throw ParseError("palette entries need three components");
      Color color{};
      for (std::size_t i = 0; i < 3; ++i) {
        if (rgb[i] < 0 || rgb[i] > 255) throw ParseError("palette component out of range");
        color[i] = static_cast<std::uint8_t>(rgb[i]);
      }
      m.palette.push_back(color);
    }
    const fs::path base = path.parent_path();
    for (const auto& p : doc.at("pairs")) {
      fs::path image = p.at("image").get<std::string>();
      fs::path labels = p.at("labels").get<std::string>();
      if (image.is_relative()) image = base / image;
      if (labels.is_relative()) labels = base / labels;
      m.pairs.push_back({image, labels});
    }
    m.validate();
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  } catch (const DimensionError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return m;
}

void save_manifest(const fs::path& path, const DatasetManifest& manifest) {
  manifest.validate();
  json doc;
  doc["classes"] = manifest.classes;
  doc["palette"] = json::array();
  for (const auto& c : manifest.palette) doc["palette"].push_back({c[0], c[1], c[2]});
  doc["pairs"] = json::array();
  for (const auto& p : manifest.pairs) {
    doc["pairs"].push_back({{"image", p.image.generic_string()}, {"labels", p.labels.generic_string()}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

LabelMap read_label_map(const fs::path& path, std::size_t class_count) {
  const Image8 img = read_image(path);
  if (img.channels != 1) throw ParseError(path.string() + ": label image must be single-channel");
  LabelMap labels(img.height, img.width);
  for (std::size_t r = 0; r < img.height; ++r) {
    for (std::size_t c = 0; c < img.width; ++c) {
      const std::uint8_t v = img.at(r, c, 0);
      if (v != kIgnoreLabel && v >= class_count) {
        throw ParseError(path.string() + ": label " + std::to_string(v) + " at row " + std::to_string(r) +
                         ", column " + std::to_string(c) + " is outside [0, " + std::to_string(class_count) +
                         ")");
      }
      labels.at(r, c) = v;
    }
  }
  return labels;
}

void write_label_map(const fs::path& path, const LabelMap& labels) {
  Image8 img(labels.height, labels.width, 1);
  img.data = labels.data;
  write_image(path, img);
}

Dataset load_dataset(const fs::path& manifest_path) {
  Dataset ds;
  ds.manifest = load_manifest(manifest_path);
  for (const auto& pair : ds.manifest.pairs) {
    LabeledSample s;
    s.image = image_to_map<double>(read_image(pair.image));
    s.labels = read_label_map(pair.labels, ds.manifest.class_count());
    if (s.labels.height != s.image.height() || s.labels.width != s.image.width()) {
      throw DimensionError(pair.labels.string() + ": label map size differs from " + pair.image.string());
    }
    s.id = pair.image.stem().string();
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

DatasetManifest save_dataset(const fs::path& dir, const Dataset& dataset) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "labels");
  DatasetManifest m = dataset.manifest;
  m.pairs.clear();
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%04zu.png", i);
    const fs::path image = fs::path("images") / name;
    const fs::path labels = fs::path("labels") / name;
    write_image(dir / image, map_to_image(dataset.samples[i].image));
    write_label_map(dir / labels, dataset.samples[i].labels);
    m.pairs.push_back({image, labels});
  }
  save_manifest(dir / "manifest.json", m);
  return m;
}

SyntheticKind parse_synthetic_kind(std::string_view text) {
  if (text == "longrange") return SyntheticKind::kLongRange;
  if (text == "multiscale") return SyntheticKind::kMultiScale;
  throw ParseError("unknown synthetic set '" + std::string(text) + "' (expected longrange or multiscale)");
}

std::string_view synthetic_kind_name(SyntheticKind kind) {
  return kind == SyntheticKind::kLongRange ? "longrange" : "multiscale";
}

namespace {

constexpr std::uint8_t kBackground = 24;
constexpr Color kRedCue{220, 30, 30};
constexpr Color kBlueCue{30, 30, 220};

std::uint8_t uniform_byte(std::mt19937_64& rng, unsigned lo, unsigned hi) {
  return static_cast<std::uint8_t>(lo + rng() % (hi - lo));
}

void set_gray(Image8& img, std::size_t r, std::size_t c, std::uint8_t v) {
  for (std::size_t ch = 0; ch < 3; ++ch) img.at(r, c, ch) = v;
}

Dataset generate_longrange(std::size_t count, std::size_t s, std::uint64_t seed) {
  Dataset ds;
  ds.manifest.classes = {"background", "red-cue", "blue-cue"};
  ds.manifest.palette = {Color{0, 0, 0}, Color{200, 60, 60}, Color{60, 60, 200}};
  std::mt19937_64 rng(seed);
  const std::size_t lo = 3 * s / 8;
  const std::size_t hi = 5 * s / 8;
  const std::size_t cue = std::max<std::size_t>(2, s / 16);
  std::vector<std::uint8_t> texture;
  std::size_t corner = 0;
  std::size_t first_class = 1;
  for (std::size_t i = 0; i < count; ++i) {
    if (i % 2 == 0) {
      texture.resize((hi - lo) * (hi - lo));
      for (auto& v : texture) v = uniform_byte(rng, 96, 224);
      corner = rng() % 4;
      first_class = 1 + rng() % 2;
    }
    const std::size_t cls = (i % 2 == 0) ? first_class : 3 - first_class;
    Image8 img(s, s, 3, kBackground);
    LabelMap labels(s, s, 0);
    for (std::size_t r = lo; r < hi; ++r) {
      for (std::size_t c = lo; c < hi; ++c) {
        set_gray(img, r, c, texture[(r - lo) * (hi - lo) + (c - lo)]);
        labels.at(r, c) = static_cast<std::uint8_t>(cls);
      }
    }
    const std::size_t r0 = (corner / 2 == 0) ? 0 : s - cue;
    const std::size_t c0 = (corner % 2 == 0) ? 0 : s - cue;
    const Color color = cls == 1 ? kRedCue : kBlueCue;
    for (std::size_t r = r0; r < r0 + cue; ++r) {
      for (std::size_t c = c0; c < c0 + cue; ++c) {
        for (std::size_t ch = 0; ch < 3; ++ch) img.at(r, c, ch) = color[ch];
      }
    }
    ds.samples.push_back({image_to_map<double>(img), std::move(labels), "longrange-" + std::to_string(i)});
  }
  return ds;
}

Dataset generate_multiscale(std::size_t count, std::size_t s, std::uint64_t seed) {
  Dataset ds;
  ds.manifest.classes = {"background", "small", "medium", "large"};
  ds.manifest.palette = {Color{0, 0, 0}, Color{230, 160, 40}, Color{40, 180, 90}, Color{70, 110, 230}};
  std::mt19937_64 rng(seed);
  const long base = static_cast<long>(std::max<std::size_t>(1, s / 16));
  const long n = static_cast<long>(s);
  for (std::size_t i = 0; i < count; ++i) {
    Image8 img(s, s, 3);
    LabelMap labels(s, s, 0);
    for (std::size_t r = 0; r < s; ++r) {
      for (std::size_t c = 0; c < s; ++c) set_gray(img, r, c, uniform_byte(rng, 0, 48));
    }
    struct Disc {
      long r, c, radius;
    };
    std::vector<Disc> placed;
    const std::size_t blobs = 2 + rng() % 2;
    for (std::size_t b = 0; b < blobs; ++b) {
      // Cycle through scales so every class appears across the set.
      const std::size_t k = (i + b) % 3;
      const long radius = base << k;
      for (int attempt = 0; attempt < 100; ++attempt) {
        const long span = n - 2 * radius;
        const long cr = radius + static_cast<long>(rng() % static_cast<std::uint64_t>(span));
        const long cc = radius + static_cast<long>(rng() % static_cast<std::uint64_t>(span));
        const bool clear = std::all_of(placed.begin(), placed.end(), [&](const Disc& d) {
          const long gap = d.radius + radius + 2;
          return (d.r - cr) * (d.r - cr) + (d.c - cc) * (d.c - cc) > gap * gap;
        });
        if (!clear) continue;
        placed.push_back({cr, cc, radius});
        for (long r = cr - radius; r <= cr + radius; ++r) {
          for (long c = cc - radius; c <= cc + radius; ++c) {
            if ((r - cr) * (r - cr) + (c - cc) * (c - cc) > radius * radius) continue;
            set_gray(img, r, c, uniform_byte(rng, 128, 256));
            labels.at(r, c) = static_cast<std::uint8_t>(k + 1);
          }
        }
        break;
      }
    }
    ds.samples.push_back({image_to_map<double>(img), std::move(labels), "multiscale-" + std::to_string(i)});
  }
  return ds;
}

}  // namespace

Dataset generate_synthetic(SyntheticKind kind, std::size_t count, std::size_t size, std::uint64_t seed) {
  if (size < 24 || size % 8 != 0) {
    throw DimensionError("synthetic image size must be at least 24 and divisible by 8, got " +
                         std::to_string(size));
  }
  return kind == SyntheticKind::kLongRange ? generate_longrange(count, size, seed)
                                           : generate_multiscale(count, size, seed);
}

double foreground_accuracy(const ConfusionMatrix& confusion, std::size_t background) {
  std::uint64_t total = 0;
  std::uint64_t right = 0;
  for (std::size_t k = 0; k < confusion.classes(); ++k) {
    if (k == background) continue;
    total += confusion.row_total(k);
    right += confusion.count(k, k);
  }
  return total == 0 ? 0.0 : static_cast<double>(right) / static_cast<double>(total);
}

template <typename T>
std::vector<TrainingSample<T>> make_training_samples(std::span<const LabeledSample> samples,
                                                     const ModelConfig& config) {
  std::vector<TrainingSample<T>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    TrainingSample<T> t;
    t.image = FeatureMap<T>(s.image.height(), s.image.width(), s.image.channels());
    std::transform(s.image.values().begin(), s.image.values().end(), t.image.values().begin(),
                   [](double v) { return static_cast<T>(v); });
    if (config.topic_context) t.topic = topic_feature(t.image, config.topic);
    t.labels = s.labels;
    t.id = s.id;
    out.push_back(std::move(t));
  }
  return out;
}

template <typename T>
Prediction<T> predict(const ModelConfig& config, const ModelParams<T>& params, const FeatureMap<T>& image,
                      std::span<const T> topic) {
  ModelOutput<T> out = model_forward(config, params, image, topic);
  Prediction<T> p;
  p.labels = argmax_labels(out.probs);
  p.probs = std::move(out.probs);
  p.weights = std::move(out.fusion.weights);
  return p;
}

template <typename T>
Evaluation evaluate(const ModelConfig& config, const ModelParams<T>& params,
                    std::span<const TrainingSample<T>> samples) {
  if (samples.empty()) throw DimensionError("evaluate: empty sample set");
  ConfusionMatrix confusion(config.class_count);
  double loss = 0.0;
  for (const auto& s : samples) {
    const FullResult<T> r = forward_full(config, params, s.image, s.labels, std::span<const T>(s.topic));
    confusion.add(s.labels, argmax_labels(r.output.probs));
    loss += r.loss.loss;
  }
  Evaluation e;
  e.metrics = summarize(confusion);
  e.foreground_accuracy = foreground_accuracy(confusion);
  e.mean_loss = loss / static_cast<double>(samples.size());
  return e;
}

Image8 colorize_labels(const LabelMap& labels, std::span<const Color> palette) {
  Image8 img(labels.height, labels.width, 3);
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    const std::uint8_t v = labels.data[i];
    // Ignored pixels render white.
    const Color c = v < palette.size() ? palette[v] : Color{255, 255, 255};
    std::copy(c.begin(), c.end(), img.data.begin() + static_cast<std::ptrdiff_t>(3 * i));
  }
  return img;
}

LabelMap decode_palette_image(const Image8& image, std::span<const Color> palette) {
  if (image.channels != 3) throw DimensionError("palette image must have three channels");
  LabelMap labels(image.height, image.width);
  for (std::size_t r = 0; r < image.height; ++r) {
    for (std::size_t c = 0; c < image.width; ++c) {
      const Color px{image.at(r, c, 0), image.at(r, c, 1), image.at(r, c, 2)};
      const auto it = std::find(palette.begin(), palette.end(), px);
      if (it != palette.end()) {
        labels.at(r, c) = static_cast<std::uint8_t>(it - palette.begin());
      } else if (px == Color{255, 255, 255}) {
        labels.at(r, c) = kIgnoreLabel;
      } else {
        throw IoError("color (" + std::to_string(px[0]) + ", " + std::to_string(px[1]) + ", " +
                      std::to_string(px[2]) + ") at row " + std::to_string(r) + ", column " +
                      std::to_string(c) + " is not in the palette");
      }
    }
  }
  return labels;
}

template <typename T>
std::vector<fs::path> export_prediction(const Prediction<T>& prediction, std::span<const Color> palette,
                                        const fs::path& dir, const std::string& stem, bool weight_maps) {
  fs::create_directories(dir);
  std::vector<fs::path> written;
  const fs::path label_path = dir / (stem + "_labels.png");
  write_image(label_path, colorize_labels(prediction.labels, palette));
  written.push_back(label_path);
  if (!weight_maps) return written;
  const FeatureMap<T>& w = prediction.weights;
  for (std::size_t q = 0; q < w.channels(); ++q) {
    FeatureMap<T> level(w.height(), w.width(), 1);
    for (std::size_t r = 0; r < w.height(); ++r) {
      for (std::size_t c = 0; c < w.width(); ++c) level.at(r, c, 0) = w.at(r, c, q);
    }
    const fs::path path = dir / (stem + "_weight" + std::to_string(q + 1) + ".png");
    write_image(path, map_to_image(level));
    written.push_back(path);
  }
  return written;
}

template <typename T>
std::vector<FusionResult> compare_fusion(const RunConfig& config, std::span<const TrainingSample<T>> train_set,
                                         std::span<const TrainingSample<T>> test_set,
                                         std::span<const FusionMode> modes,
                                         const std::function<void(FusionMode, const EpochLog&)>& on_epoch) {
  std::vector<FusionResult> results;
  for (const FusionMode mode : modes) {
    ModelConfig model = config.model;
    model.fusion = mode;
    std::function<void(const EpochLog&)> hook;
    if (on_epoch) hook = [&](const EpochLog& row) { on_epoch(mode, row); };
    TrainResult<T> trained =
        train(model, init_params<T>(model, config.seed), train_set, config.train, hook);
    FusionResult r;
    r.mode = mode;
    r.final_loss = trained.log.empty() ? 0.0 : trained.log.back().loss;
    r.train = evaluate(model, trained.params, train_set);
    r.test = evaluate(model, trained.params, test_set);
    results.push_back(std::move(r));
  }
  return results;
}

namespace {

const FusionResult* find_mode(const FusionSeedResults& run, FusionMode mode) {
  for (const auto& r : run.results) {
    if (r.mode == mode) return &r;
  }
  return nullptr;
}

}  // namespace

FusionOrdering count_fusion_ordering(std::span<const FusionSeedResults> runs) {
  FusionOrdering o;
  for (const auto& run : runs) {
    const FusionResult* att = find_mode(run, FusionMode::kAttention);
    const FusionResult* avg = find_mode(run, FusionMode::kAverage);
    const FusionResult* max = find_mode(run, FusionMode::kMax);
    if (att == nullptr || avg == nullptr || max == nullptr) continue;
    ++o.seeds;
    o.attention_ge_average += att->test.metrics.pixel_accuracy >= avg->test.metrics.pixel_accuracy;
    o.average_ge_max += avg->test.metrics.pixel_accuracy >= max->test.metrics.pixel_accuracy;
  }
  return o;
}

std::string format_fusion_table(std::span<const FusionSeedResults> runs) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-6s %-10s %10s %10s %10s %10s %10s\n", "seed", "fusion", "train_pix",
                "train_cls", "test_pix", "test_cls", "loss");
  out << line;
  struct Sum {
    double v[5] = {};
    std::size_t n = 0;
  };
  std::map<FusionMode, Sum> sums;
  std::vector<FusionMode> order;
  for (const auto& run : runs) {
    for (const auto& r : run.results) {
      const double v[5] = {r.train.metrics.pixel_accuracy, r.train.metrics.class_accuracy,
                           r.test.metrics.pixel_accuracy, r.test.metrics.class_accuracy, r.final_loss};
      std::snprintf(line, sizeof line, "%-6llu %-10s %10.4f %10.4f %10.4f %10.4f %10.4f\n",
                    static_cast<unsigned long long>(run.seed), std::string(fusion_mode_name(r.mode)).c_str(), v[0],
                    v[1], v[2], v[3], v[4]);
      out << line;
      if (!sums.count(r.mode)) order.push_back(r.mode);
      Sum& s = sums[r.mode];
      for (int k = 0; k < 5; ++k) s.v[k] += v[k];
      ++s.n;
    }
  }
  for (const FusionMode mode : order) {
    const Sum& s = sums[mode];
    const double n = static_cast<double>(s.n);
    std::snprintf(line, sizeof line, "%-6s %-10s %10.4f %10.4f %10.4f %10.4f %10.4f\n", "mean",
                  std::string(fusion_mode_name(mode)).c_str(), s.v[0] / n, s.v[1] / n, s.v[2] / n, s.v[3] / n,
                  s.v[4] / n);
    out << line;
  }
  const FusionOrdering o = count_fusion_ordering(runs);
  if (o.seeds > 0) {
    out << "attention >= average: " << o.attention_ge_average << "/" << o.seeds
        << "  average >= max: " << o.average_ge_max << "/" << o.seeds << "\n";
  }
  return out.str();
}

TrainingSample<double> random_check_sample(const ModelConfig& config, std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  TrainingSample<double> s;
  s.image = FeatureMap<double>(size, size, config.backbone.input_channels);
  for (auto& v : s.image.values()) v = unit(rng);
  s.labels = LabelMap(size, size);
  for (auto& v : s.labels.data) v = static_cast<std::uint8_t>(rng() % config.class_count);
  if (config.topic_context) s.topic = topic_feature(s.image, config.topic);
  s.id = "check-" + std::to_string(seed);
  return s;
}

#define MLCRNN_INSTANTIATE_PIPELINE(T)                                                                  \
  template std::vector<TrainingSample<T>> make_training_samples<T>(std::span<const LabeledSample>,     \
                                                                   const ModelConfig&);                 \
  template Prediction<T> predict<T>(const ModelConfig&, const ModelParams<T>&, const FeatureMap<T>&,    \
                                    std::span<const T>);                                                \
  template Evaluation evaluate<T>(const ModelConfig&, const ModelParams<T>&,                            \
                                  std::span<const TrainingSample<T>>);                                  \
  template std::vector<fs::path> export_prediction<T>(const Prediction<T>&, std::span<const Color>,     \
                                                      const fs::path&, const std::string&, bool);       \
  template std::vector<FusionResult> compare_fusion<T>(                                                 \
      const RunConfig&, std::span<const TrainingSample<T>>, std::span<const TrainingSample<T>>,         \
      std::span<const FusionMode>, const std::function<void(FusionMode, const EpochLog&)>&);

MLCRNN_INSTANTIATE_PIPELINE(float)
MLCRNN_INSTANTIATE_PIPELINE(double)

}  // namespace mlcrnn
