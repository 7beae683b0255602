#include "mlcrnn/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mlcrnn/error.hpp"

namespace mlcrnn {

namespace {

using nlohmann::json;

/// Reads keys of one JSON object, rejecting anything not consumed.
class Reader {
 public:
  Reader(const json& object, std::string where, std::string origin)
      : object_(object), where_(std::move(where)), origin_(std::move(origin)) {
    if (!object_.is_object()) fail(where_, "expected an object");
  }

  template <typename V>
  void get(const std::string& key, V& out) {
    seen_.insert(key);
    const auto it = object_.find(key);
    if (it == object_.end()) return;
    try {
      out = it->template get<V>();
    } catch (const json::exception&) {
      fail(path(key), "has the wrong type");
    }
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    const auto it = object_.find(key);
    return it == object_.end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : object_.items()) {
      if (!seen_.count(key)) fail(path(key), "is not a recognized setting");
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ParseError(origin_ + ": '" + key + "' " + what);
  }

 private:
  const json& object_;
  std::string where_;
  std::string origin_;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(origin + ": invalid JSON: " + e.what());
  }
  RunConfig cfg;
  Reader top(root, "", origin);

  if (const json* b = top.child("backbone")) {
    Reader r(*b, "backbone", origin);
    r.get("input_channels", cfg.model.backbone.input_channels);
    r.get("stages", cfg.model.backbone.stage_filters);
    r.get("taps", cfg.model.backbone.taps);
    r.finish();
  }
  top.get("classes", cfg.model.class_count);
  top.get("hidden_dims", cfg.model.hidden_dims);
  top.get("global_context", cfg.model.global_context);
  top.get("topic_context", cfg.model.topic_context);
  if (const json* t = top.child("topic")) {
    Reader r(*t, "topic", origin);
    r.get("scales", cfg.model.topic.scales);
    r.get("orientations", cfg.model.topic.orientations);
    r.get("grid", cfg.model.topic.grid);
    r.finish();
  }
  std::string fusion = std::string(fusion_mode_name(cfg.model.fusion));
  top.get("fusion", fusion);
  try {
    cfg.model.fusion = parse_fusion_mode(fusion);
  } catch (const ParseError& e) {
    throw ParseError(origin + ": " + e.what());
  }
  top.get("attention_filters", cfg.model.attention_filters);
  top.get("recurrent_norm_cap", cfg.model.recurrent_norm_cap);

  if (const json* o = top.child("optimizer")) {
    Reader r(*o, "optimizer", origin);
    auto& opt = cfg.train.optimizer;
    r.get("learning_rate", opt.learning_rate);
    r.get("momentum", opt.momentum);
    r.get("decay_rate", opt.decay_rate);
    r.get("decay_after", opt.decay_after);
    std::string schedule = opt.schedule == DecaySchedule::kPerEpoch ? "per_epoch" : "stepwise";
    r.get("schedule", schedule);
    if (schedule == "per_epoch") {
      opt.schedule = DecaySchedule::kPerEpoch;
    } else if (schedule == "stepwise") {
      opt.schedule = DecaySchedule::kStepwise;
    } else {
      r.fail(r.path("schedule"), "must be \"per_epoch\" or \"stepwise\"");
    }
    r.get("clip_norm", opt.clip_norm);
    r.finish();
  }
  if (const json* t = top.child("train")) {
    Reader r(*t, "train", origin);
    r.get("epochs", cfg.train.epochs);
    r.get("batch_size", cfg.train.batch_size);
    r.get("shuffle", cfg.train.shuffle);
    r.get("frozen", cfg.train.frozen);
    r.get("target_loss", cfg.train.target_loss);
    r.get("checkpoint_every", cfg.train.checkpoint_every);
    r.finish();
  }
  top.get("seed", cfg.seed);
  std::string precision = cfg.precision == Precision::kDouble ? "double" : "single";
  top.get("precision", precision);
  if (precision == "double") {
    cfg.precision = Precision::kDouble;
  } else if (precision == "single" || precision == "float") {
    cfg.precision = Precision::kSingle;
  } else {
    top.fail("precision", "must be \"double\" or \"single\"");
  }
  top.finish();

  cfg.train.seed = cfg.seed;
  try {
    cfg.model.validate();
  } catch (const DimensionError& e) {
    throw ParseError(origin + ": " + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), path.string());
}

std::string dump_run_config(const RunConfig& cfg) {
  const auto& m = cfg.model;
  const auto& o = cfg.train.optimizer;
  json j;
  j["backbone"] = {{"input_channels", m.backbone.input_channels},
                   {"stages", m.backbone.stage_filters},
                   {"taps", m.backbone.taps}};
  j["classes"] = m.class_count;
  j["hidden_dims"] = m.hidden_dims;
  j["global_context"] = m.global_context;
  j["topic_context"] = m.topic_context;
  j["topic"] = {{"scales", m.topic.scales}, {"orientations", m.topic.orientations}, {"grid", m.topic.grid}};
  j["fusion"] = std::string(fusion_mode_name(m.fusion));
  j["attention_filters"] = m.attention_filters;
  j["recurrent_norm_cap"] = m.recurrent_norm_cap;
  j["optimizer"] = {{"learning_rate", o.learning_rate},
                    {"momentum", o.momentum},
                    {"decay_rate", o.decay_rate},
                    {"decay_after", o.decay_after},
                    {"schedule", o.schedule == DecaySchedule::kPerEpoch ? "per_epoch" : "stepwise"},
                    {"clip_norm", o.clip_norm}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"shuffle", cfg.train.shuffle},
                {"frozen", cfg.train.frozen},
                {"target_loss", cfg.train.target_loss},
                {"checkpoint_every", cfg.train.checkpoint_every}};
  j["seed"] = cfg.seed;
  j["precision"] = cfg.precision == Precision::kDouble ? "double" : "single";
  return j.dump(2) + "\n";
}

}  // namespace mlcrnn
