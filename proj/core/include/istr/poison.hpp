#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "istr/dataset.hpp"

namespace istr {

// A trigger as the attacker defines it: where it sits (mask), what it looks
// like (pattern), how strongly it blends in (alpha), and which label flip it
// buys. Stamping applies  x' = (1-alpha*mask)*x + alpha*mask*pattern,  so
// pixels with mask 0 are untouched bit-for-bit.
struct TriggerSpec {
  Tensor mask;     // [C,H,W] in [0,1]
  Tensor pattern;  // [C,H,W] in [0,1]
  float alpha = 1.0f;
  int target = 0;
  std::vector<int> sources;  // empty = source-agnostic
  std::string tag;           // preset label for reports

  // Canonical trigger image alpha*(mask*pattern); reverse triggers are
  // compared against this.
  Tensor trigger_image() const;
  void validate(const Shape& image_shape, int class_count) const;
};

Tensor stamp_image(const Tensor& img, const TriggerSpec& t);
Tensor stamp_image(const Tensor& img, const TriggerSpec& t, float alpha_override);
// Stamp every sample, labels untouched; provenance becomes Stamped.
Dataset stamp_all(const Dataset& d, const TriggerSpec& t);

// Additive application used for reverse triggers: clamp01(x + delta).
Tensor stamp_additive(const Tensor& img, const Tensor& delta);
Dataset stamp_additive_all(const Dataset& d, const Tensor& delta);

// One poisoning campaign for one trigger.
struct PoisonPlan {
  TriggerSpec trigger;
  float rate = 0.1f;            // stamped+relabeled count = ceil(rate * N)
  float cover_rate = 0.0f;      // stamped, label kept; count = ceil(rate * N)
  float cover_alpha = -1.0f;    // < 0: use trigger.alpha
  bool require_feature = false; // carriers only (see apply_innocuous_feature)
};

struct PoisonResult {
  Dataset data;
  std::vector<int> poisoned;  // indices stamped and relabeled
  std::vector<int> covers;    // indices stamped with label kept
};

// Applies every plan to disjoint sample sets, deterministically under seed.
// Selection pools honor each trigger's source classes; plans with
// require_feature draw poisons from carriers and covers from non-carriers.
// Throws ArgumentError when a pool cannot supply the requested count.
PoisonResult poison(const Dataset& clean, const std::vector<PoisonPlan>& plans,
                    uint64_t seed, const std::vector<uint8_t>* carriers = nullptr);

// An innocuous feature: a benign glyph present on a fraction of every class,
// label-neutral by itself.
struct FeatureSpec {
  Tensor mask, pattern;
  float alpha = 1.0f;
  float fraction = 0.3f;
};

struct FeatureResult {
  Dataset data;
  std::vector<uint8_t> carriers;  // 1 where the feature was stamped
};
FeatureResult apply_innocuous_feature(const Dataset& d, const FeatureSpec& f,
                                      uint64_t seed);

// A named attack: one or more poison plans plus an optional innocuous
// feature pass that must run first.
struct AttackSetup {
  std::string name;
  std::vector<PoisonPlan> plans;
  std::optional<FeatureSpec> feature;

  // Ground-truth (source, target) pairs this attack implants.
  std::vector<std::pair<int, int>> truth_pairs(int class_count) const;
  std::vector<int> truth_classes(int class_count) const;
};

// Config-exposed knobs; negative/empty values mean "preset default".
struct AttackParams {
  int target = 8;
  float rate = 0.1f;
  float alpha = -1.0f;
  int patch = 4;
  float sine_freq = 6.0f;
  float sine_alpha = 0.2f;
  std::vector<int> sources;       // source-specific presets
  float cover_rate = -1.0f;
  float feature_fraction = 0.3f;
  int trigger_count = 2;          // multitrigger only: 2 or 4
  std::vector<int> extra_targets; // multitrigger targets 2..4; default 1,3,5
};

// Presets: badnets, badnets_checker, sine, multitrigger, ssba, cassock, hcb.
AttackSetup make_attack(const std::string& preset, const Shape& image_shape,
                        int class_count, const AttackParams& params);
const std::vector<std::string>& attack_names();

}  // namespace istr
