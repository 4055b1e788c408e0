#include "istr/poison.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <unordered_set>

#include "istr/errors.hpp"
#include "istr/rng.hpp"

namespace istr {

Tensor TriggerSpec::trigger_image() const {
  Tensor out(mask.shape());
  for (int64_t i = 0; i < mask.numel(); ++i)
    out.data()[i] = alpha * mask.data()[i] * pattern.data()[i];
  return out;
}

void TriggerSpec::validate(const Shape& image_shape, int class_count) const {
  if (mask.shape() != image_shape || pattern.shape() != image_shape)
    throw DimensionError("trigger mask/pattern shape must match image shape " +
                         shape_str(image_shape));
  for (int64_t i = 0; i < mask.numel(); ++i) {
    float m = mask.data()[i], p = pattern.data()[i];
    if (!(m >= 0.0f && m <= 1.0f) || !(p >= 0.0f && p <= 1.0f))
      throw ArgumentError("trigger mask/pattern values must lie in [0,1]");
  }
  if (!(alpha >= 0.0f && alpha <= 1.0f))
    throw ArgumentError("trigger alpha must lie in [0,1]");
  if (target < 0 || target >= class_count)
    throw ArgumentError("trigger target " + std::to_string(target) +
                        " out of range for " + std::to_string(class_count) +
                        " classes");
  for (int s : sources)
    if (s < 0 || s >= class_count)
      throw ArgumentError("trigger source class " + std::to_string(s) +
                          " out of range");
}

Tensor stamp_image(const Tensor& img, const TriggerSpec& t) {
  return stamp_image(img, t, t.alpha);
}

Tensor stamp_image(const Tensor& img, const TriggerSpec& t, float alpha_override) {
  if (img.shape() != t.mask.shape())
    throw DimensionError("stamp_image: image shape " + shape_str(img.shape()) +
                         " does not match trigger " + shape_str(t.mask.shape()));
  Tensor out = img;
  for (int64_t i = 0; i < img.numel(); ++i) {
    float am = alpha_override * t.mask.data()[i];
    if (am != 0.0f)
      out.data()[i] = (1.0f - am) * img.data()[i] + am * t.pattern.data()[i];
  }
  return out;
}

Dataset stamp_all(const Dataset& d, const TriggerSpec& t) {
  Dataset out = d;
  out.provenance = Provenance::Stamped;
  for (int i = 0; i < d.size(); ++i) out.set_image(i, stamp_image(d.image(i), t));
  return out;
}

Tensor stamp_additive(const Tensor& img, const Tensor& delta) {
  if (img.shape() != delta.shape())
    throw DimensionError("stamp_additive: delta shape " + shape_str(delta.shape()) +
                         " does not match image " + shape_str(img.shape()));
  Tensor out = img;
  for (int64_t i = 0; i < img.numel(); ++i)
    out.data()[i] = std::clamp(img.data()[i] + delta.data()[i], 0.0f, 1.0f);
  return out;
}

Dataset stamp_additive_all(const Dataset& d, const Tensor& delta) {
  Dataset out = d;
  out.provenance = Provenance::Stamped;
  for (int i = 0; i < d.size(); ++i)
    out.set_image(i, stamp_additive(d.image(i), delta));
  return out;
}

namespace {

int ceil_count(float rate, int n) {
  if (rate <= 0.0f) return 0;
  // Nudge below the product before rounding up so the float->double widening
  // of e.g. 0.1f (a hair above 0.1) cannot bump the ceil by one.
  return static_cast<int>(std::ceil(static_cast<double>(rate) * n - 1e-4));
}

std::vector<int> pick(std::vector<int>& pool, int count, Rng& rng,
                      const std::string& what) {
  if (static_cast<int>(pool.size()) < count)
    throw ArgumentError("poison: need " + std::to_string(count) + " " + what +
                        " candidates but only " + std::to_string(pool.size()) +
                        " remain");
  rng.shuffle(pool);
  std::vector<int> chosen(pool.begin(), pool.begin() + count);
  pool.erase(pool.begin(), pool.begin() + count);
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

}  // namespace

PoisonResult poison(const Dataset& clean, const std::vector<PoisonPlan>& plans,
                    uint64_t seed, const std::vector<uint8_t>* carriers) {
  clean.validate();
  if (carriers && static_cast<int>(carriers->size()) != clean.size())
    throw ArgumentError("poison: carrier flags must cover every sample");
  for (size_t p = 0; p < plans.size(); ++p) {
    plans[p].trigger.validate(clean.image_shape(), clean.class_count);
    if (plans[p].require_feature && !carriers)
      throw ArgumentError("poison: plan requires feature carriers but none given");
  }

  PoisonResult res;
  res.data = clean;
  res.data.provenance = Provenance::Poisoned;
  std::vector<uint8_t> used(clean.size(), 0);
  Rng rng(seed);

  for (size_t p = 0; p < plans.size(); ++p) {
    const PoisonPlan& plan = plans[p];
    const TriggerSpec& t = plan.trigger;
    std::unordered_set<int> src(t.sources.begin(), t.sources.end());
    auto is_source = [&](int label) { return src.empty() || src.count(label) > 0; };

    std::vector<int> poison_pool;
    for (int i = 0; i < clean.size(); ++i) {
      if (used[i]) continue;
      int label = clean.labels[i];
      if (label == t.target) continue;
      bool carrier = carriers && (*carriers)[i] != 0;
      if (is_source(label) && (!plan.require_feature || carrier))
        poison_pool.push_back(i);
    }

    int want = ceil_count(plan.rate, clean.size());
    std::vector<int> chosen = pick(poison_pool, want, rng, t.tag + " poison");
    for (int i : chosen) {
      res.data.set_image(i, stamp_image(clean.image(i), t));
      res.data.labels[i] = t.target;
      used[i] = 1;
      res.poisoned.push_back(i);
    }

    if (plan.cover_rate > 0.0f) {
      // Covers teach the model to ignore the trigger outside its intended
      // context: on non-source classes when the trigger is source-specific,
      // on feature-free samples when it is feature-gated, and anywhere
      // otherwise (low-strength cloaking).
      std::vector<int> cover_pool;
      for (int i = 0; i < clean.size(); ++i) {
        if (used[i]) continue;
        int label = clean.labels[i];
        if (label == t.target) continue;
        bool carrier = carriers && (*carriers)[i] != 0;
        if (!src.empty() && is_source(label)) continue;
        if (plan.require_feature && carrier) continue;
        cover_pool.push_back(i);
      }
      float ca = plan.cover_alpha < 0.0f ? t.alpha : plan.cover_alpha;
      int cwant = ceil_count(plan.cover_rate, clean.size());
      std::vector<int> cov = pick(cover_pool, cwant, rng, t.tag + " cover");
      for (int i : cov) {
        res.data.set_image(i, stamp_image(clean.image(i), t, ca));
        used[i] = 1;
        res.covers.push_back(i);
      }
    }
  }
  std::sort(res.poisoned.begin(), res.poisoned.end());
  std::sort(res.covers.begin(), res.covers.end());
  return res;
}

FeatureResult apply_innocuous_feature(const Dataset& d, const FeatureSpec& f,
                                      uint64_t seed) {
  d.validate();
  if (!(f.fraction >= 0.0f && f.fraction <= 1.0f))
    throw ArgumentError("feature fraction must lie in [0,1]");
  TriggerSpec as_trigger{f.mask, f.pattern, f.alpha, 0, {}, "feature"};
  as_trigger.validate(d.image_shape(), d.class_count);

  FeatureResult res;
  res.data = d;
  res.carriers.assign(d.size(), 0);
  Rng rng(seed);
  auto by_class = indices_by_class(d);
  for (int c = 0; c < d.class_count; ++c) {
    auto& idx = by_class[c];
    int want = ceil_count(f.fraction, static_cast<int>(idx.size()));
    rng.shuffle(idx);
    for (int k = 0; k < want; ++k) {
      int i = idx[k];
      res.data.set_image(i, stamp_image(d.image(i), as_trigger));
      res.carriers[i] = 1;
    }
  }
  return res;
}

std::vector<std::pair<int, int>> AttackSetup::truth_pairs(int class_count) const {
  std::vector<std::pair<int, int>> out;
  for (const PoisonPlan& p : plans) {
    std::vector<int> src = p.trigger.sources;
    if (src.empty())
      for (int c = 0; c < class_count; ++c) src.push_back(c);
    for (int s : src)
      if (s != p.trigger.target) out.emplace_back(s, p.trigger.target);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<int> AttackSetup::truth_classes(int class_count) const {
  std::vector<int> out;
  for (auto& [s, t] : truth_pairs(class_count)) out.push_back(s);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

namespace {

enum class Corner { TopRight, LowerLeft, TopLeft, BottomRight };

// Square patches sit one pixel inside the border so boundary effects of
// padding never clip them.
void patch_bounds(Corner c, int h, int w, int p, int& r0, int& c0) {
  switch (c) {
    case Corner::TopRight:    r0 = 1;         c0 = w - 1 - p; break;
    case Corner::LowerLeft:   r0 = h - 1 - p; c0 = 1;         break;
    case Corner::TopLeft:     r0 = 1;         c0 = 1;         break;
    case Corner::BottomRight: r0 = h - 1 - p; c0 = w - 1 - p; break;
  }
}

TriggerSpec corner_patch(const Shape& shape, Corner corner, int p, float alpha,
                         int target, const std::string& tag, bool checker,
                         uint64_t noise_seed = 0) {
  int ch = shape[0], h = shape[1], w = shape[2];
  if (p < 1 || p + 2 > h || p + 2 > w)
    throw ArgumentError("patch size " + std::to_string(p) +
                        " does not fit a " + std::to_string(h) + "x" +
                        std::to_string(w) + " image");
  TriggerSpec t;
  t.mask = Tensor(shape);
  t.pattern = Tensor(shape);
  t.alpha = alpha;
  t.target = target;
  t.tag = tag;
  int r0, c0;
  patch_bounds(corner, h, w, p, r0, c0);
  Rng noise(noise_seed ^ 0x55ba55ba55ba55baULL);
  for (int r = r0; r < r0 + p; ++r)
    for (int cc = c0; cc < c0 + p; ++cc) {
      float v = 1.0f;
      if (checker) v = ((r + cc) % 2 == 0) ? 1.0f : 0.0f;
      if (noise_seed) v = 0.25f + 0.75f * noise.next_float();
      for (int k = 0; k < ch; ++k) {
        t.mask.at3(k, r, cc) = 1.0f;
        t.pattern.at3(k, r, cc) = v;
      }
    }
  return t;
}

TriggerSpec sine_trigger(const Shape& shape, float freq, float alpha, int target) {
  TriggerSpec t;
  t.mask = Tensor::ones(shape);
  t.pattern = Tensor(shape);
  t.alpha = alpha;
  t.target = target;
  t.tag = "sine";
  int ch = shape[0], h = shape[1], w = shape[2];
  for (int y = 0; y < h; ++y) {
    float v = 0.5f + 0.5f * std::sin(2.0f * std::numbers::pi_v<float> * freq * y / h);
    for (int k = 0; k < ch; ++k)
      for (int x = 0; x < w; ++x) t.pattern.at3(k, y, x) = v;
  }
  return t;
}

// A benign bracket glyph near the bottom-right corner: the innocuous feature
// for the hidden-composite attack. Distinct in shape and position from every
// trigger patch.
FeatureSpec bracket_feature(const Shape& shape, float fraction) {
  int ch = shape[0], h = shape[1], w = shape[2];
  FeatureSpec f;
  f.mask = Tensor(shape);
  f.pattern = Tensor(shape);
  f.alpha = 0.9f;
  f.fraction = fraction;
  int r1 = h - 3, c1 = w - 3, len = std::min(6, std::min(h, w) - 4);
  for (int i = 0; i < len; ++i) {
    for (int k = 0; k < ch; ++k) {
      f.mask.at3(k, r1, c1 - i) = 1.0f;       // bottom edge
      f.pattern.at3(k, r1, c1 - i) = 1.0f;
      f.mask.at3(k, r1 - i, c1) = 1.0f;       // right edge
      f.pattern.at3(k, r1 - i, c1) = 1.0f;
    }
  }
  return f;
}

}  // namespace

AttackSetup make_attack(const std::string& preset, const Shape& image_shape,
                        int class_count, const AttackParams& params) {
  if (static_cast<int>(image_shape.size()) != 3)
    throw DimensionError("make_attack expects a [C,H,W] image shape, got " +
                         shape_str(image_shape));
  if (params.target < 0 || params.target >= class_count)
    throw ArgumentError("attack target out of range");
  float alpha = params.alpha;
  AttackSetup out;
  out.name = preset;

  auto plan = [&](TriggerSpec t, float rate, float cover_rate, float cover_alpha,
                  bool require_feature) {
    PoisonPlan p;
    p.trigger = std::move(t);
    p.rate = rate;
    p.cover_rate = cover_rate;
    p.cover_alpha = cover_alpha;
    p.require_feature = require_feature;
    out.plans.push_back(std::move(p));
  };

  // Patch presets accept an optional source restriction. A source-specific
  // patch ships with cover samples (stamped, label kept) on the excluded
  // classes, otherwise the model generalizes the patch across every class
  // and the restriction is cosmetic.
  auto patch_sources = [&](TriggerSpec& t) {
    t.sources = params.sources;
    for (int s : t.sources)
      if (s == params.target)
        throw ArgumentError(t.tag + " source classes must differ from the target");
    if (params.cover_rate >= 0) return params.cover_rate;
    return t.sources.empty() ? 0.0f : params.rate;
  };

  if (preset == "badnets") {
    TriggerSpec t = corner_patch(image_shape, Corner::TopRight, params.patch,
                                 alpha < 0 ? 1.0f : alpha, params.target,
                                 "badnets", false);
    float cr = patch_sources(t);
    plan(std::move(t), params.rate, cr, -1.0f, false);
  } else if (preset == "badnets_checker") {
    TriggerSpec t = corner_patch(image_shape, Corner::TopRight, params.patch,
                                 alpha < 0 ? 1.0f : alpha, params.target,
                                 "badnets_checker", true);
    float cr = patch_sources(t);
    plan(std::move(t), params.rate, cr, -1.0f, false);
  } else if (preset == "sine") {
    plan(sine_trigger(image_shape, params.sine_freq, params.sine_alpha,
                      params.target),
         params.rate, 0.0f, -1.0f, false);
  } else if (preset == "multitrigger") {
    if (params.trigger_count != 2 && params.trigger_count != 4)
      throw ArgumentError("multitrigger supports trigger_count 2 or 4");
    std::vector<int> targets{params.target};
    std::vector<int> extra = params.extra_targets.empty()
                                 ? std::vector<int>{1, 3, 5}
                                 : params.extra_targets;
    for (int t : extra) targets.push_back(t);
    targets.resize(params.trigger_count);
    static const Corner kCorners[4] = {Corner::TopRight, Corner::LowerLeft,
                                       Corner::TopLeft, Corner::BottomRight};
    for (int i = 0; i < params.trigger_count; ++i) {
      if (targets[i] < 0 || targets[i] >= class_count)
        throw ArgumentError("multitrigger target out of range");
      bool checker = (i % 2 == 1);  // alternate looks so triggers stay distinct
      plan(corner_patch(image_shape, kCorners[i], params.patch,
                        alpha < 0 ? 1.0f : alpha, targets[i],
                        "multitrigger_" + std::to_string(i), checker),
           params.rate, 0.0f, -1.0f, false);
    }
  } else if (preset == "ssba") {
    TriggerSpec t = corner_patch(image_shape, Corner::TopRight, params.patch,
                                 alpha < 0 ? 1.0f : alpha, params.target, "ssba",
                                 false, /*noise_seed=*/0x5ba1);
    t.sources = params.sources.empty() ? std::vector<int>{3, 5, 7} : params.sources;
    for (int s : t.sources)
      if (s == params.target)
        throw ArgumentError("ssba source classes must differ from the target");
    float cr = params.cover_rate < 0 ? params.rate : params.cover_rate;
    plan(std::move(t), params.rate, cr, -1.0f, false);
  } else if (preset == "cassock") {
    int ch = image_shape[0], h = image_shape[1], w = image_shape[2];
    int p = std::min(8, std::min(h, w) / 3);
    TriggerSpec t;
    t.mask = Tensor(image_shape);
    t.pattern = Tensor(image_shape);
    t.alpha = alpha < 0 ? 0.5f : alpha;
    t.target = params.target;
    t.tag = "cassock";
    int r0 = (h - p) / 2, c0 = (w - p) / 2;
    for (int r = r0; r < r0 + p; ++r)
      for (int cc = c0; cc < c0 + p; ++cc)
        for (int k = 0; k < ch; ++k) {
          t.mask.at3(k, r, cc) = 1.0f;
          t.pattern.at3(k, r, cc) = 1.0f;
        }
    float cr = params.cover_rate < 0 ? params.rate : params.cover_rate;
    float cloak_alpha = t.alpha * 0.5f;
    plan(std::move(t), params.rate, cr, cloak_alpha, false);
  } else if (preset == "hcb") {
    out.feature = bracket_feature(image_shape, params.feature_fraction);
    TriggerSpec t = corner_patch(image_shape, Corner::TopRight, params.patch,
                                 alpha < 0 ? 1.0f : alpha, params.target, "hcb",
                                 false);
    float cr = params.cover_rate < 0 ? params.rate : params.cover_rate;
    plan(std::move(t), params.rate, cr, -1.0f, true);
  } else {
    std::string valid;
    for (const auto& n : attack_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw ArgumentError("unknown attack preset '" + preset + "' (valid: " + valid +
                        ")");
  }

  for (auto& p : out.plans) p.trigger.validate(image_shape, class_count);
  return out;
}

const std::vector<std::string>& attack_names() {
  static const std::vector<std::string> kNames{
      "badnets", "badnets_checker", "sine",    "multitrigger",
      "ssba",    "cassock",         "hcb"};
  return kNames;
}

}  // namespace istr
