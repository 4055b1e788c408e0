#include "istr/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "istr/checkpoint.hpp"
#include "istr/dataset.hpp"
#include "istr/dms.hpp"
#include "istr/errors.hpp"
#include "istr/image_io.hpp"
#include "istr/metrics.hpp"
#include "istr/poison.hpp"
#include "istr/repair.hpp"
#include "istr/steps.hpp"

namespace istr {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// Stage-seed salts, xor-mixed with the run seed so every stage draws from an
// independent stream while staying a pure function of the config seed.
constexpr uint64_t kSaltTrainData = 0x7261696e64617461ULL;
constexpr uint64_t kSaltTestData = 0x7465737464617461ULL;
constexpr uint64_t kSaltFeatureTrain = 0x6665617472610001ULL;
constexpr uint64_t kSaltFeatureTest = 0x6665617465730001ULL;
constexpr uint64_t kSaltPoison = 0x706f69736f6e0001ULL;
constexpr uint64_t kSaltShadowInit = 0x736861646f770001ULL;
constexpr uint64_t kSaltVictimInit = 0x76696374696d0001ULL;

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot read " + p.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot write " + p.string());
  f << text;
}

json read_json_file(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::exception& e) {
    throw FormatError(p.string() + " is not valid JSON: " + e.what());
  }
}

void write_json_if_absent(const fs::path& p, const json& j) {
  if (fs::exists(p)) return;  // artifacts are append-only
  write_text(p, j.dump(2) + "\n");
}

// Every heavy artifact lives next to a viewable PNG rendering.
void save_tensor_with_view(const Tensor& t, const fs::path& base, bool signed_view) {
  fs::create_directories(base.parent_path());
  fs::path tsr = base;
  tsr += ".tsr";
  fs::path png = base;
  png += ".png";
  if (!fs::exists(tsr)) write_tensor(tsr.string(), t);
  if (!fs::exists(png))
    write_png(png.string(), signed_view ? chw_to_image_signed(t) : chw_to_image(t));
}

struct StageClock {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
        .count();
  }
};

class Run {
public:
  Run(RunConfig cfg, fs::path dir) : cfg_(std::move(cfg)), dir_(std::move(dir)) {}

  PipelineResult execute(const std::string& stage);

private:
  RunConfig cfg_;
  fs::path dir_;
  PipelineResult result_;
  std::map<std::string, double> timings_;

  // Lazily materialized inputs; everything below is a pure function of the
  // config, so resuming in a fresh process reproduces identical data.
  std::optional<Dataset> train_clean_, test_clean_;
  std::optional<Dataset> train_world_, test_world_;  // innocuous feature applied
  std::optional<std::vector<uint8_t>> train_carriers_, test_carriers_;
  std::optional<Dataset> train_poisoned_;
  std::optional<AttackSetup> attack_;
  std::optional<Model> shadow_, victim_, repaired_;

  bool natural_mode() const { return cfg_.attack_preset == "none"; }
  fs::path p(const std::string& rel) const { return dir_ / rel; }
  bool has(const std::string& rel) const { return fs::exists(p(rel)); }

  void require(const std::string& rel, const std::string& what) {
    if (!has(rel))
      throw PrerequisiteError(what + " missing (expected " + p(rel).string() + ")");
  }

  void ensure_dir_and_config();
  void load_data();
  const Dataset& train_clean() { load_data(); return *train_clean_; }
  const Dataset& test_clean() { load_data(); return *test_clean_; }
  const Dataset& train_world() { load_data(); return *train_world_; }
  const Dataset& test_world() { load_data(); return *test_world_; }
  const Dataset& train_poisoned() { load_data(); return *train_poisoned_; }
  const AttackSetup* attack() { load_data(); return attack_ ? &*attack_ : nullptr; }

  Model& shadow_model();
  Model& victim_model();

  bool stage_train();
  bool stage_poison();
  bool stage_detect();
  bool stage_dms();
  bool stage_invert();
  bool stage_repair();
  bool stage_eval();
  bool stage_report();

  void run_stage(const std::string& name, const std::function<bool()>& body);
  void flush_timings();

  std::vector<std::pair<int, int>> detection_pairs();
  std::vector<Tensor> load_all_envelopes();

  // Samples the attack actually flips, inside the world test set (for a
  // feature-gated attack the trigger only fires on carriers).
  std::vector<int> true_eligible(const PoisonPlan& plan);
};

void Run::ensure_dir_and_config() {
  fs::create_directories(dir_);
  std::string echo = config_echo(cfg_);
  fs::path cfg_path = p("config.echo.json");
  if (fs::exists(cfg_path)) {
    if (read_text(cfg_path) != echo)
      throw StateError("run directory " + dir_.string() +
                       " was created with a different config");
  } else {
    write_text(cfg_path, echo);
  }
}

void Run::load_data() {
  if (train_clean_) return;
  const DatasetSpec& d = cfg_.dataset;
  if (!d.name.empty()) {
    train_clean_ = synth_dataset(d.name, d.train_count, cfg_.seed ^ kSaltTrainData);
    test_clean_ = synth_dataset(d.name, d.test_count, cfg_.seed ^ kSaltTestData);
  } else if (!d.train_images.empty()) {
    train_clean_ = load_idx(d.train_images, d.train_labels);
    test_clean_ = load_idx(d.test_images, d.test_labels);
  } else {
    train_clean_ = load_image_dir(d.train_dir);
    test_clean_ = load_image_dir(d.test_dir);
  }
  if (test_clean_->class_count != train_clean_->class_count ||
      test_clean_->image_shape() != train_clean_->image_shape())
    throw ConfigError("train and test datasets disagree on shape or classes");

  if (!natural_mode())
    attack_ = make_attack(cfg_.attack_preset, train_clean_->image_shape(),
                          train_clean_->class_count, cfg_.attack);

  if (attack_ && attack_->feature) {
    FeatureResult ftr = apply_innocuous_feature(*train_clean_, *attack_->feature,
                                                cfg_.seed ^ kSaltFeatureTrain);
    train_world_ = std::move(ftr.data);
    train_carriers_ = std::move(ftr.carriers);
    FeatureResult fte = apply_innocuous_feature(*test_clean_, *attack_->feature,
                                                cfg_.seed ^ kSaltFeatureTest);
    test_world_ = std::move(fte.data);
    test_carriers_ = std::move(fte.carriers);
  } else {
    train_world_ = train_clean_;
    test_world_ = test_clean_;
  }

  if (attack_) {
    PoisonResult pr =
        poison(*train_world_, attack_->plans, cfg_.seed ^ kSaltPoison,
               train_carriers_ ? &*train_carriers_ : nullptr);
    train_poisoned_ = std::move(pr.data);
  } else {
    train_poisoned_ = train_world_;
  }
}

Model& Run::shadow_model() {
  if (!shadow_) {
    require("checkpoints/shadow.ckpt", "shadow checkpoint");
    shadow_ = load_checkpoint(p("checkpoints/shadow.ckpt").string());
  }
  return *shadow_;
}

Model& Run::victim_model() {
  if (!victim_) {
    require("checkpoints/model.ckpt", "model checkpoint");
    victim_ = load_checkpoint(p("checkpoints/model.ckpt").string());
  }
  return *victim_;
}

bool Run::stage_train() {
  if (has("checkpoints/shadow.ckpt")) return false;
  ModelArch arch = cfg_.arch.find('|') != std::string::npos
                       ? ModelArch::parse(cfg_.arch)
                       : ModelArch::preset(cfg_.arch, train_clean().image_shape(),
                                           train_clean().class_count);
  Model m = Model::build(arch, cfg_.seed ^ kSaltShadowInit);
  TrainConfig tc = cfg_.train;
  train(m, train_world(), tc);
  m.metadata()["role"] = "shadow";
  m.metadata()["attack"] = "none";
  fs::create_directories(p("checkpoints"));
  save_checkpoint(m, p("checkpoints/shadow.ckpt").string());
  shadow_ = std::move(m);
  return true;
}

bool Run::stage_poison() {
  if (has("checkpoints/model.ckpt")) return false;
  fs::create_directories(p("checkpoints"));
  if (natural_mode()) {
    // No implant: the victim under study is the clean model itself.
    Model m = shadow_model();
    m.metadata()["role"] = "victim";
    m.metadata()["attack"] = "none";
    save_checkpoint(m, p("checkpoints/model.ckpt").string());
    victim_ = std::move(m);
    return true;
  }
  ModelArch arch = cfg_.arch.find('|') != std::string::npos
                       ? ModelArch::parse(cfg_.arch)
                       : ModelArch::preset(cfg_.arch, train_clean().image_shape(),
                                           train_clean().class_count);
  Model m = Model::build(arch, cfg_.seed ^ kSaltVictimInit);
  TrainConfig tc = cfg_.train;
  train(m, train_poisoned(), tc);
  m.metadata()["role"] = "victim";
  m.metadata()["attack"] = cfg_.attack_preset;
  save_checkpoint(m, p("checkpoints/model.ckpt").string());
  victim_ = std::move(m);

  for (size_t i = 0; i < attack()->plans.size(); ++i) {
    const TriggerSpec& t = attack()->plans[i].trigger;
    save_tensor_with_view(t.trigger_image(), p("triggers/true_" + t.tag), false);
  }
  return true;
}

bool Run::stage_detect() {
  if (has("raw/scan.json") && has("raw/screen.json") && has("curves/mutation.csv"))
    return false;
  require("checkpoints/model.ckpt", "model checkpoint");
  Model& m = victim_model();

  ScanResult scan = detect_scan(m, test_world(), nullptr, cfg_.detect);
  ScreenResult screen = screen_suspects(scan.lead, cfg_.screen);

  json sj;
  sj["budget"] = scan.budget;
  sj["class_count"] = scan.class_count;
  sj["optimization_runs"] = scan.optimization_runs;
  sj["scanned"] = scan.lead.scanned;
  json lead = json::array();
  for (int a = 0; a < scan.class_count; ++a) {
    json row = json::array();
    for (int b = 0; b < scan.class_count; ++b) row.push_back(scan.lead.at(a, b));
    lead.push_back(row);
  }
  sj["lead"] = lead;
  json recs = json::array();
  for (const ScanRecord& r : scan.records)
    recs.push_back({{"index", r.index},
                    {"label", r.label},
                    {"flip_epoch", r.flip_epoch},
                    {"flipped_to", r.flipped_to}});
  sj["records"] = recs;
  write_json_if_absent(p("raw/scan.json"), sj);

  json gj;
  gj["rates"] = screen.rates;
  gj["flagged"] = screen.flagged;
  json pairs = json::array();
  for (const SuspectPair& sp : screen.pairs)
    pairs.push_back({{"source", sp.source},
                     {"target", sp.target},
                     {"lead_fraction", sp.lead_fraction}});
  gj["pairs"] = pairs;
  gj["lower_mean"] = screen.lower_mean;
  gj["saturated"] = screen.saturated;
  gj["top_biased"] = {{"source", screen.top_biased_pair.first},
                      {"target", screen.top_biased_pair.second},
                      {"fraction", screen.top_biased_fraction}};
  write_json_if_absent(p("raw/screen.json"), gj);

  if (!has("curves/mutation.csv")) {
    fs::create_directories(p("curves"));
    write_mutation_curves(scan, p("curves/mutation.csv").string());
  }
  return true;
}

std::vector<std::pair<int, int>> Run::detection_pairs() {
  require("raw/screen.json", "screening results");
  json gj = read_json_file(p("raw/screen.json"));
  std::vector<std::pair<int, int>> pairs;
  for (const auto& row : gj.at("pairs"))
    pairs.emplace_back(row.at("source").get<int>(), row.at("target").get<int>());
  if (pairs.empty() && natural_mode()) {
    // Nothing screened out of a clean model: study its strongest natural
    // confusion channel instead.
    const auto& tb = gj.at("top_biased");
    int s = tb.at("source").get<int>(), t = tb.at("target").get<int>();
    if (s >= 0 && t >= 0 && tb.at("fraction").get<double>() > 0.0)
      pairs.emplace_back(s, t);
  }
  return pairs;
}

bool Run::stage_dms() {
  if (natural_mode() || !cfg_.detect_use_dms) return false;  // nothing to do
  require("raw/screen.json", "screening results");
  json gj = read_json_file(p("raw/screen.json"));
  std::vector<int> classes;
  if (cfg_.full_dms) {
    for (int c = 0; c < test_world().class_count; ++c) classes.push_back(c);
  } else {
    for (const auto& v : gj.at("flagged")) classes.push_back(v.get<int>());
    std::vector<std::pair<int, int>> pairs = detection_pairs();
    for (auto& [s, t] : pairs) classes.push_back(s);
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  }

  bool all_present = !classes.empty();
  for (int c : classes)
    if (!has("masks/envelope_class" + std::to_string(c) + ".tsr"))
      all_present = false;
  bool want_dms_scan = cfg_.full_dms;
  if (want_dms_scan && !(has("raw/scan_dms.json") && has("raw/screen_dms.json")))
    all_present = false;
  if (all_present) return false;
  if (classes.empty()) return false;

  require("checkpoints/model.ckpt", "model checkpoint");
  require("checkpoints/shadow.ckpt", "shadow checkpoint");
  Model& m = victim_model();
  Model& s = shadow_model();

  std::map<int, Tensor> envelopes;
  for (int c : classes) {
    fs::path base = p("masks/envelope_class" + std::to_string(c));
    fs::path tsr = base;
    tsr += ".tsr";
    if (fs::exists(tsr)) {
      envelopes.emplace(c, read_tensor(tsr.string()));
    } else {
      Tensor env = dms_class_envelope(m, s, test_world(), c, cfg_.dms);
      save_tensor_with_view(env, base, false);
      envelopes.emplace(c, std::move(env));
    }
  }

  if (want_dms_scan && !(has("raw/scan_dms.json") && has("raw/screen_dms.json"))) {
    std::vector<Tensor> env_list;
    for (int c = 0; c < test_world().class_count; ++c)
      env_list.push_back(envelopes.at(c));
    ScanParams masked = cfg_.detect;
    masked.budget = cfg_.dms_budget;
    ScanResult scan = detect_scan(m, test_world(), &env_list, masked);
    ScreenResult screen = screen_suspects(scan.lead, cfg_.screen);

    json sj;
    sj["budget"] = scan.budget;
    sj["class_count"] = scan.class_count;
    sj["optimization_runs"] = scan.optimization_runs;
    sj["scanned"] = scan.lead.scanned;
    json lead = json::array();
    for (int a = 0; a < scan.class_count; ++a) {
      json row = json::array();
      for (int b = 0; b < scan.class_count; ++b) row.push_back(scan.lead.at(a, b));
      lead.push_back(row);
    }
    sj["lead"] = lead;
    json recs = json::array();
    for (const ScanRecord& r : scan.records)
      recs.push_back({{"index", r.index},
                      {"label", r.label},
                      {"flip_epoch", r.flip_epoch},
                      {"flipped_to", r.flipped_to}});
    sj["records"] = recs;
    write_json_if_absent(p("raw/scan_dms.json"), sj);

    json dj;
    dj["rates"] = screen.rates;
    dj["flagged"] = screen.flagged;
    json pairs = json::array();
    for (const SuspectPair& sp : screen.pairs)
      pairs.push_back({{"source", sp.source},
                       {"target", sp.target},
                       {"lead_fraction", sp.lead_fraction}});
    dj["pairs"] = pairs;
    dj["lower_mean"] = screen.lower_mean;
    dj["saturated"] = screen.saturated;
    dj["top_biased"] = {{"source", screen.top_biased_pair.first},
                        {"target", screen.top_biased_pair.second},
                        {"fraction", screen.top_biased_fraction}};
    write_json_if_absent(p("raw/screen_dms.json"), dj);

    if (!has("curves/mutation_dms.csv")) {
      fs::create_directories(p("curves"));
      write_mutation_curves(scan, p("curves/mutation_dms.csv").string());
    }
  }
  return true;
}

bool Run::stage_invert() {
  if (has("raw/inversion.json")) return false;
  require("checkpoints/model.ckpt", "model checkpoint");
  Model& m = victim_model();
  std::vector<std::pair<int, int>> pairs = detection_pairs();

  json rows = json::array();
  for (auto& [src, tgt] : pairs) {
    std::optional<Tensor> env;
    if (cfg_.detect_use_dms && !natural_mode()) {
      std::string rel = "masks/envelope_class" + std::to_string(src) + ".tsr";
      require(rel, "differential envelope for class " + std::to_string(src));
      env = read_tensor(p(rel).string());
    }
    InversionResult inv = invert_pair(m, test_world(), src, tgt,
                                      env ? &*env : nullptr, cfg_.invert);
    std::string name =
        "reverse_" + std::to_string(src) + "_to_" + std::to_string(tgt);
    if (inv.samples_used > 0)
      save_tensor_with_view(inv.trigger, p("triggers/" + name), true);
    double rev_rate =
        inv.samples_used > 0
            ? flip_rate(m, test_world(), inv.trigger, {src}, tgt)
            : 0.0;
    rows.push_back({{"source", src},
                    {"target", tgt},
                    {"samples_run", inv.samples_run},
                    {"samples_used", inv.samples_used},
                    {"hit_fraction", inv.hit_fraction},
                    {"from_flip_fallback", inv.from_flip_fallback},
                    {"trigger_file",
                     inv.samples_used > 0 ? "triggers/" + name + ".tsr" : ""},
                    {"reverse_flip_rate", rev_rate}});
  }
  json j;
  j["pairs"] = rows;
  write_json_if_absent(p("raw/inversion.json"), j);
  return true;
}

bool Run::stage_repair() {
  if (has("raw/repair.json")) return false;
  require("checkpoints/model.ckpt", "model checkpoint");
  require("raw/inversion.json", "inversion results");
  Model& m = victim_model();

  json inv = read_json_file(p("raw/inversion.json"));
  std::vector<RepairTrigger> triggers;
  std::vector<int> pair_sources;  // reporting only; unlearning is per-delta
  json rows = json::array();
  for (const auto& row : inv.at("pairs")) {
    std::string file = row.at("trigger_file").get<std::string>();
    if (file.empty()) continue;
    RepairTrigger t;
    t.delta = read_tensor(p(file).string());
    t.target = row.at("target").get<int>();
    // Leave sources empty: unlearn the delta across every non-target class.
    // Immunity should not hinge on which class the screen paired it with,
    // and a single class pool is too small to carry the stamped share.
    pair_sources.push_back(row.at("source").get<int>());
    triggers.push_back(std::move(t));
  }

  json j;
  if (triggers.empty()) {
    j["repaired"] = false;
    j["reason"] = "no recovered triggers";
    j["pairs"] = json::array();
    write_json_if_absent(p("raw/repair.json"), j);
    return true;
  }

  double nsr_before = evaluate(m, test_clean()).accuracy;
  std::vector<double> asr_before;
  for (size_t i = 0; i < triggers.size(); ++i)
    asr_before.push_back(flip_rate(m, test_world(), triggers[i].delta,
                                   {pair_sources[i]}, triggers[i].target));

  Dataset unlearn_set =
      build_unlearn_set(train_world(), triggers, cfg_.repair_mix, cfg_.seed);
  Model repaired = m;
  unlearn_finetune(repaired, unlearn_set, cfg_.repair);
  repaired.metadata()["role"] = "repaired";
  fs::create_directories(p("checkpoints"));
  if (!has("checkpoints/model-repaired.ckpt"))
    save_checkpoint(repaired, p("checkpoints/model-repaired.ckpt").string());

  RepairOutcome out = verify_repair(repaired, test_clean(), triggers);
  std::vector<double> asr_after;
  for (size_t i = 0; i < triggers.size(); ++i)
    asr_after.push_back(flip_rate(repaired, test_world(), triggers[i].delta,
                                  {pair_sources[i]}, triggers[i].target));

  j["repaired"] = true;
  for (size_t i = 0; i < triggers.size(); ++i)
    rows.push_back({{"source", pair_sources[i]},
                    {"target", triggers[i].target},
                    {"asr_before", asr_before[i]},
                    {"asr_after", asr_after[i]}});
  j["pairs"] = rows;
  j["nsr_before"] = nsr_before;
  j["nsr_after"] = out.nsr;
  write_json_if_absent(p("raw/repair.json"), j);
  repaired_ = std::move(repaired);
  return true;
}

std::vector<int> Run::true_eligible(const PoisonPlan& plan) {
  const Dataset& t = test_world();
  std::vector<int> out;
  for (int i = 0; i < t.size(); ++i) {
    int label = t.labels[i];
    if (label == plan.trigger.target) continue;
    if (!plan.trigger.sources.empty() &&
        std::find(plan.trigger.sources.begin(), plan.trigger.sources.end(),
                  label) == plan.trigger.sources.end())
      continue;
    if (plan.require_feature && test_carriers_ && !(*test_carriers_)[i]) continue;
    out.push_back(i);
  }
  return out;
}

bool Run::stage_eval() {
  if (has("raw/eval.json")) return false;
  require("checkpoints/model.ckpt", "model checkpoint");
  Model& m = victim_model();

  json j;
  json acc;
  if (has("checkpoints/shadow.ckpt"))
    acc["shadow"] = evaluate(shadow_model(), test_clean()).accuracy;
  acc["model"] = evaluate(m, test_clean()).accuracy;
  std::optional<Model> repaired;
  if (has("checkpoints/model-repaired.ckpt")) {
    repaired = load_checkpoint(p("checkpoints/model-repaired.ckpt").string());
    acc["repaired"] = evaluate(*repaired, test_clean()).accuracy;
  }
  j["accuracy"] = acc;

  json attacks = json::array();
  if (attack()) {
    for (const PoisonPlan& plan : attack()->plans) {
      std::vector<int> eligible = true_eligible(plan);
      if (eligible.empty()) continue;
      Dataset sub = test_world().subset(eligible);
      double asr = attack_success_rate(m, sub, plan.trigger);
      json row = {{"tag", plan.trigger.tag},
                  {"target", plan.trigger.target},
                  {"asr_model", asr}};
      if (repaired)
        row["asr_repaired"] = attack_success_rate(*repaired, sub, plan.trigger);
      attacks.push_back(row);
    }
  }
  j["true_triggers"] = attacks;

  json rev = json::array();
  if (has("raw/inversion.json") && attack()) {
    json inv = read_json_file(p("raw/inversion.json"));
    for (const auto& row : inv.at("pairs")) {
      std::string file = row.at("trigger_file").get<std::string>();
      if (file.empty()) continue;
      int src = row.at("source").get<int>();
      int tgt = row.at("target").get<int>();
      const PoisonPlan* match = nullptr;
      for (const PoisonPlan& plan : attack()->plans)
        if (plan.trigger.target == tgt &&
            (plan.trigger.sources.empty() ||
             std::find(plan.trigger.sources.begin(), plan.trigger.sources.end(),
                       src) != plan.trigger.sources.end())) {
          match = &plan;
          break;
        }
      if (!match) continue;
      Tensor delta = read_tensor(p(file).string());
      double a = apd(match->trigger.trigger_image(), delta);
      double f = flip_rate(m, test_world(), delta, {src}, tgt);
      rev.push_back({{"source", src},
                     {"target", tgt},
                     {"tag", match->trigger.tag},
                     {"apd", a},
                     {"fir", f}});
    }
  }
  j["reverse_vs_true"] = rev;
  write_json_if_absent(p("raw/eval.json"), j);
  return true;
}

bool Run::stage_report() {
  bool any_raw = has("raw/scan.json") || has("raw/screen.json") ||
                 has("raw/inversion.json") || has("raw/repair.json") ||
                 has("raw/eval.json");
  if (!any_raw)
    throw PrerequisiteError("no raw dumps to report from (expected files under " +
                            p("raw").string() + ")");

  bool wrote = false;
  auto emit = [&](const std::string& rel, const json& j) {
    if (has(rel)) return;
    write_json_if_absent(p(rel), j);
    wrote = true;
  };

  DetectionTruth truth;
  if (attack()) {
    truth.class_count = test_world().class_count;
    truth.pairs = attack()->truth_pairs(truth.class_count);
    truth.classes = attack()->truth_classes(truth.class_count);
  } else {
    truth.class_count = test_world().class_count;
  }

  auto screen_to_report = [&](const json& gj) {
    ScreenResult screen;
    screen.rates = gj.at("rates").get<std::vector<double>>();
    screen.flagged = gj.at("flagged").get<std::vector<int>>();
    for (const auto& row : gj.at("pairs")) {
      SuspectPair sp;
      sp.source = row.at("source").get<int>();
      sp.target = row.at("target").get<int>();
      sp.lead_fraction = row.at("lead_fraction").get<double>();
      screen.pairs.push_back(sp);
    }
    DetectionScore score = score_detection(screen, truth);
    json r;
    r["rates"] = gj.at("rates");
    r["flagged"] = gj.at("flagged");
    r["pairs"] = gj.at("pairs");
    r["saturated"] = gj.at("saturated");
    r["top_biased"] = gj.at("top_biased");
    r["truth_pairs"] = truth.pairs;
    r["score"] = {{"accuracy", score.accuracy},
                  {"tpr_class", score.tpr_class},
                  {"tpr_pair", score.tpr_pair},
                  {"false_flagged", score.false_flagged}};
    return r;
  };

  if (has("raw/screen.json")) {
    json r = screen_to_report(read_json_file(p("raw/screen.json")));
    if (has("raw/scan.json")) {
      json sj = read_json_file(p("raw/scan.json"));
      r["scan"] = {{"budget", sj.at("budget")},
                   {"scanned", sj.at("scanned")},
                   {"optimization_runs", sj.at("optimization_runs")}};
    }
    emit("reports/detection.json", r);
  }
  if (has("raw/screen_dms.json")) {
    json r = screen_to_report(read_json_file(p("raw/screen_dms.json")));
    if (has("raw/scan_dms.json")) {
      json sj = read_json_file(p("raw/scan_dms.json"));
      r["scan"] = {{"budget", sj.at("budget")},
                   {"scanned", sj.at("scanned")},
                   {"optimization_runs", sj.at("optimization_runs")}};
    }
    emit("reports/detection_dms.json", r);
  }
  if (has("raw/inversion.json"))
    emit("reports/inversion.json", read_json_file(p("raw/inversion.json")));
  if (has("raw/repair.json"))
    emit("reports/repair.json", read_json_file(p("raw/repair.json")));
  if (has("raw/eval.json"))
    emit("reports/eval.json", read_json_file(p("raw/eval.json")));

  if (!has("reports/summary.json")) {
    json s;
    s["attack"] = cfg_.attack_preset;
    s["dataset"] = cfg_.dataset.name.empty() ? "files" : cfg_.dataset.name;
    s["seed"] = cfg_.seed;
    if (has("reports/detection.json"))
      s["detection"] = read_json_file(p("reports/detection.json")).at("score");
    if (has("reports/detection_dms.json"))
      s["detection_dms"] =
          read_json_file(p("reports/detection_dms.json")).at("score");
    if (has("raw/repair.json")) {
      json rj = read_json_file(p("raw/repair.json"));
      if (rj.contains("nsr_after")) {
        s["nsr_before"] = rj.at("nsr_before");
        s["nsr_after"] = rj.at("nsr_after");
      }
    }
    if (has("raw/eval.json"))
      s["accuracy"] = read_json_file(p("raw/eval.json")).at("accuracy");
    emit("reports/summary.json", s);
  }
  return wrote;
}

void Run::run_stage(const std::string& name, const std::function<bool()>& body) {
  StageClock clock;
  try {
    bool did_work = body();
    (did_work ? result_.stages_run : result_.stages_skipped).push_back(name);
    if (did_work) timings_[name] = clock.seconds();
  } catch (const Error& e) {
    throw Error(e.kind(), "stage '" + name + "': " + e.what());
  } catch (const std::exception& e) {
    throw StateError("stage '" + name + "': " + std::string(e.what()));
  }
}

void Run::flush_timings() {
  if (timings_.empty()) return;
  fs::path tp = p("timings.json");
  json j = fs::exists(tp) ? read_json_file(tp) : json::object();
  for (const auto& [stage, secs] : timings_) j[stage] = secs;
  write_text(tp, j.dump(2) + "\n");  // informational; rewritten on purpose
}

PipelineResult Run::execute(const std::string& stage) {
  ensure_dir_and_config();
  result_.out_dir = dir_.string();

  std::map<std::string, std::function<bool()>> bodies{
      {"train", [this] { return stage_train(); }},
      {"poison", [this] { return stage_poison(); }},
      {"detect", [this] { return stage_detect(); }},
      {"dms", [this] { return stage_dms(); }},
      {"invert", [this] { return stage_invert(); }},
      {"repair", [this] { return stage_repair(); }},
      {"eval", [this] { return stage_eval(); }},
      {"report", [this] { return stage_report(); }},
  };

  if (stage == "run") {
    for (const std::string& name : pipeline_stage_names())
      run_stage(name, bodies.at(name));
  } else {
    auto it = bodies.find(stage);
    if (it == bodies.end())
      throw ArgumentError("unknown pipeline stage '" + stage +
                          "' (valid: train, poison, detect, dms, invert, "
                          "repair, eval, report, run)");
    run_stage(stage, it->second);
  }
  flush_timings();
  return result_;
}

}  // namespace

PipelineResult pipeline_run(const RunConfig& cfg, const std::string& out_dir,
                            const std::string& stage) {
  Run run(cfg, fs::path(out_dir));
  return run.execute(stage);
}

const std::vector<std::string>& pipeline_stage_names() {
  static const std::vector<std::string> kOrder{
      "train", "poison", "detect", "dms", "invert", "repair", "eval", "report"};
  return kOrder;
}

}  // namespace istr
