#include "istr/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "istr/errors.hpp"

namespace istr {

namespace {

using json = nlohmann::ordered_json;

// Tracks which keys of one JSON object were consumed; anything left over at
// finish() is a config mistake worth naming.
class StrictObj {
public:
  StrictObj(const json& j, std::string prefix)
      : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object())
      throw ConfigError("config key '" + label() + "' must be an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + dotted(key) + "' has the wrong type");
    }
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key()))
        throw ConfigError("unknown config key '" + dotted(item.key()) + "'");
  }

  std::string dotted(const std::string& key) const {
    return prefix_.empty() ? key : prefix_ + "." + key;
  }

private:
  std::string label() const { return prefix_.empty() ? "<root>" : prefix_; }
  const json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

const std::set<std::string>& synth_names() {
  static const std::set<std::string> kNames{"digits", "shapes", "faces"};
  return kNames;
}

void parse_dataset(StrictObj& root, DatasetSpec& out) {
  if (!root.has("dataset"))
    throw ConfigError("config is missing the required 'dataset' entry");
  const json& d = root.raw("dataset");
  if (d.is_string()) {
    out.name = d.get<std::string>();
  } else {
    StrictObj o(d, "dataset");
    o.get("name", out.name);
    o.get("train_count", out.train_count);
    o.get("test_count", out.test_count);
    o.get("train_images", out.train_images);
    o.get("train_labels", out.train_labels);
    o.get("test_images", out.test_images);
    o.get("test_labels", out.test_labels);
    o.get("train_dir", out.train_dir);
    o.get("test_dir", out.test_dir);
    o.finish();
  }
  bool synthetic = !out.name.empty();
  bool idx = !out.train_images.empty();
  bool dir = !out.train_dir.empty();
  if (!synthetic && !idx && !dir)
    throw ConfigError("dataset must name a synthetic preset or give file paths");
  if (synthetic && !synth_names().count(out.name)) {
    std::string valid;
    for (const auto& n : synth_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("unknown dataset preset '" + out.name + "' (valid: " +
                      valid + ")");
  }
  if (idx && (out.train_labels.empty() || out.test_images.empty() ||
              out.test_labels.empty()))
    throw ConfigError("IDX datasets need train/test image and label paths");
  if (out.train_count <= 0 || out.test_count <= 0)
    throw ConfigError("dataset counts must be positive");
}

void parse_attack(StrictObj& root, RunConfig& cfg) {
  if (!root.has("attack")) return;
  StrictObj o(root.raw("attack"), "attack");
  o.get("preset", cfg.attack_preset);
  o.get("target", cfg.attack.target);
  o.get("rate", cfg.attack.rate);
  o.get("alpha", cfg.attack.alpha);
  o.get("patch", cfg.attack.patch);
  o.get("sine_freq", cfg.attack.sine_freq);
  o.get("sine_alpha", cfg.attack.sine_alpha);
  o.get("sources", cfg.attack.sources);
  o.get("cover_rate", cfg.attack.cover_rate);
  o.get("feature_fraction", cfg.attack.feature_fraction);
  o.get("trigger_count", cfg.attack.trigger_count);
  o.get("extra_targets", cfg.attack.extra_targets);
  o.finish();
  if (cfg.attack_preset != "none") {
    const auto& names = attack_names();
    if (std::find(names.begin(), names.end(), cfg.attack_preset) == names.end()) {
      std::string valid = "none";
      for (const auto& n : names) valid += ", " + n;
      throw ConfigError("unknown attack preset '" + cfg.attack_preset +
                        "' (valid: " + valid + ")");
    }
  }
}

void parse_train(StrictObj& root, TrainConfig& t) {
  if (!root.has("train")) return;
  StrictObj o(root.raw("train"), "train");
  o.get("epochs", t.epochs);
  o.get("lr", t.lr);
  o.get("momentum", t.momentum);
  o.get("batch", t.batch);
  o.finish();
}

void parse_detect(StrictObj& root, RunConfig& cfg) {
  if (!root.has("detect")) return;
  StrictObj o(root.raw("detect"), "detect");
  o.get("step", cfg.detect.step);
  o.get("budget", cfg.detect.budget);
  o.get("samples_per_class", cfg.detect.samples_per_class);
  o.get("min_gap", cfg.screen.min_gap);
  o.get("saturation", cfg.screen.saturation);
  o.get("use_dms", cfg.detect_use_dms);
  o.finish();
}

void parse_dms(StrictObj& root, RunConfig& cfg) {
  if (!root.has("dms")) return;
  DmsParams& d = cfg.dms;
  StrictObj o(root.raw("dms"), "dms");
  o.get("patch", d.patch);
  o.get("stride", d.stride);
  o.get("fill", d.fill);
  o.get("q_low", d.q_low);
  o.get("q_high", d.q_high);
  o.get("minimum", d.minimum);
  o.get("samples_per_class", d.samples_per_class);
  o.get("budget", cfg.dms_budget);
  std::string agg;
  o.get("aggregate", agg);
  if (!agg.empty()) {
    if (agg == "mean") d.aggregate = MaskAggregate::Mean;
    else if (agg == "max") d.aggregate = MaskAggregate::Max;
    else throw ConfigError("dms.aggregate must be 'mean' or 'max'");
  }
  o.finish();
}

void parse_invert(StrictObj& root, InvertParams& v) {
  if (!root.has("invert")) return;
  StrictObj o(root.raw("invert"), "invert");
  o.get("step", v.step);
  o.get("budget", v.budget);
  o.get("max_samples", v.max_samples);
  o.get("consolidate_epochs", v.consolidate_epochs);
  o.finish();
}

void parse_repair(StrictObj& root, RunConfig& cfg) {
  float lr = -1.0f;
  if (root.has("repair")) {
    StrictObj o(root.raw("repair"), "repair");
    o.get("mix", cfg.repair_mix);
    o.get("epochs", cfg.repair.epochs);
    o.get("lr", lr);
    o.get("momentum", cfg.repair.momentum);
    o.get("batch", cfg.repair.batch);
    o.finish();
  }
  cfg.repair.lr = lr >= 0.0f ? lr : cfg.train.lr / 10.0f;
}

RunConfig parse_json(const json& j) {
  RunConfig cfg;
  StrictObj root(j, "");
  parse_dataset(root, cfg.dataset);
  root.get("arch", cfg.arch);
  root.get("seed", cfg.seed);
  parse_attack(root, cfg);
  parse_train(root, cfg.train);
  parse_detect(root, cfg);
  parse_dms(root, cfg);
  parse_invert(root, cfg.invert);
  parse_repair(root, cfg);
  root.get("full_dms", cfg.full_dms);
  root.finish();

  apply_seed(cfg, cfg.seed);
  return cfg;
}

}  // namespace

void apply_seed(RunConfig& cfg, uint64_t seed) {
  // The run seed drives every stage; per-stage streams are salted later.
  cfg.seed = seed;
  cfg.detect.seed = seed;
  cfg.dms.seed = seed;
  cfg.invert.seed = seed;
  cfg.repair.seed = seed;
  cfg.train.seed = seed;
}

RunConfig parse_config_text(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_json(j);
}

RunConfig parse_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

std::string config_echo(const RunConfig& cfg) {
  json j;
  json d;
  if (!cfg.dataset.name.empty()) {
    d["name"] = cfg.dataset.name;
    d["train_count"] = cfg.dataset.train_count;
    d["test_count"] = cfg.dataset.test_count;
  }
  if (!cfg.dataset.train_images.empty()) {
    d["train_images"] = cfg.dataset.train_images;
    d["train_labels"] = cfg.dataset.train_labels;
    d["test_images"] = cfg.dataset.test_images;
    d["test_labels"] = cfg.dataset.test_labels;
  }
  if (!cfg.dataset.train_dir.empty()) {
    d["train_dir"] = cfg.dataset.train_dir;
    d["test_dir"] = cfg.dataset.test_dir;
  }
  j["dataset"] = d;
  j["arch"] = cfg.arch;
  j["seed"] = cfg.seed;
  j["attack"] = {{"preset", cfg.attack_preset},
                 {"target", cfg.attack.target},
                 {"rate", cfg.attack.rate},
                 {"alpha", cfg.attack.alpha},
                 {"patch", cfg.attack.patch},
                 {"sine_freq", cfg.attack.sine_freq},
                 {"sine_alpha", cfg.attack.sine_alpha},
                 {"sources", cfg.attack.sources},
                 {"cover_rate", cfg.attack.cover_rate},
                 {"feature_fraction", cfg.attack.feature_fraction},
                 {"trigger_count", cfg.attack.trigger_count},
                 {"extra_targets", cfg.attack.extra_targets}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"lr", cfg.train.lr},
                {"momentum", cfg.train.momentum},
                {"batch", cfg.train.batch}};
  j["detect"] = {{"step", cfg.detect.step},
                 {"budget", cfg.detect.budget},
                 {"samples_per_class", cfg.detect.samples_per_class},
                 {"min_gap", cfg.screen.min_gap},
                 {"saturation", cfg.screen.saturation},
                 {"use_dms", cfg.detect_use_dms}};
  j["dms"] = {{"patch", cfg.dms.patch},
              {"stride", cfg.dms.stride},
              {"fill", cfg.dms.fill},
              {"q_low", cfg.dms.q_low},
              {"q_high", cfg.dms.q_high},
              {"minimum", cfg.dms.minimum},
              {"samples_per_class", cfg.dms.samples_per_class},
              {"budget", cfg.dms_budget},
              {"aggregate",
               cfg.dms.aggregate == MaskAggregate::Mean ? "mean" : "max"}};
  j["invert"] = {{"step", cfg.invert.step},
                 {"budget", cfg.invert.budget},
                 {"max_samples", cfg.invert.max_samples},
                 {"consolidate_epochs", cfg.invert.consolidate_epochs}};
  j["repair"] = {{"mix", cfg.repair_mix},
                 {"epochs", cfg.repair.epochs},
                 {"lr", cfg.repair.lr},
                 {"momentum", cfg.repair.momentum},
                 {"batch", cfg.repair.batch}};
  j["full_dms"] = cfg.full_dms;
  return j.dump(2) + "\n";
}

}  // namespace istr
