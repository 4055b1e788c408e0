#include "istr/repair.hpp"

#include <algorithm>
#include <cmath>

#include "istr/errors.hpp"
#include "istr/metrics.hpp"
#include "istr/poison.hpp"
#include "istr/rng.hpp"

namespace istr {

Dataset build_unlearn_set(const Dataset& clean,
                          const std::vector<RepairTrigger>& triggers, float mix,
                          uint64_t seed) {
  clean.validate();
  if (triggers.empty())
    throw StateError("build_unlearn_set: no recovered triggers to unlearn");
  if (!(mix >= 0.0f && mix <= 1.0f))
    throw ArgumentError("build_unlearn_set: mix must lie in [0,1]");
  for (const RepairTrigger& t : triggers) {
    if (t.delta.shape() != clean.image_shape())
      throw DimensionError("build_unlearn_set: trigger delta shape mismatch");
    if (t.target < 0 || t.target >= clean.class_count)
      throw ArgumentError("build_unlearn_set: trigger target out of range");
    for (int s : t.sources)
      if (s < 0 || s >= clean.class_count)
        throw ArgumentError("build_unlearn_set: trigger source out of range");
  }
  if (mix == 0.0f) return clean;

  // Nudge below the product before rounding up: the float->double widening
  // of e.g. 0.2f lands a hair above 0.2 and would otherwise bump the ceil.
  int total = static_cast<int>(
      std::ceil(static_cast<double>(mix) * clean.size() - 1e-4));
  int per_trigger = (total + static_cast<int>(triggers.size()) - 1) /
                    static_cast<int>(triggers.size());

  std::vector<Tensor> extra_images;
  std::vector<int> extra_labels;
  Rng rng(seed);
  int appended = 0;
  for (const RepairTrigger& t : triggers) {
    std::vector<int> pool;
    for (int i = 0; i < clean.size(); ++i) {
      int label = clean.labels[i];
      if (label == t.target) continue;
      if (!t.sources.empty() &&
          std::find(t.sources.begin(), t.sources.end(), label) == t.sources.end())
        continue;
      pool.push_back(i);
    }
    int want = std::min(per_trigger, total - appended);
    if (static_cast<int>(pool.size()) < want)
      throw ArgumentError("build_unlearn_set: only " +
                          std::to_string(pool.size()) +
                          " source samples available for a trigger, need " +
                          std::to_string(want));
    rng.shuffle(pool);
    for (int k = 0; k < want; ++k) {
      int i = pool[k];
      extra_images.push_back(stamp_additive(clean.image(i), t.delta));
      extra_labels.push_back(clean.labels[i]);
      ++appended;
    }
  }

  Shape shape = clean.image_shape();
  shape.insert(shape.begin(), clean.size() + appended);
  Dataset out;
  out.images = Tensor(shape);
  out.labels = clean.labels;
  out.class_count = clean.class_count;
  out.provenance = Provenance::Stamped;
  int64_t stride = shape_numel(clean.image_shape());
  std::copy(clean.images.data(), clean.images.data() + clean.images.numel(),
            out.images.data());
  for (int k = 0; k < appended; ++k) {
    std::copy(extra_images[k].data(), extra_images[k].data() + stride,
              out.images.data() + (clean.size() + k) * stride);
    out.labels.push_back(extra_labels[k]);
  }
  out.validate();
  return out;
}

TrainResult unlearn_finetune(Model& model, const Dataset& unlearn_set,
                             const UnlearnParams& params) {
  if (params.epochs < 0)
    throw ArgumentError("unlearn_finetune: epochs must be non-negative");
  if (params.epochs == 0) return {};
  for (Param& p : model.params()) p.velocity.fill(0.0f);
  TrainConfig cfg;
  cfg.epochs = params.epochs;
  cfg.lr = params.lr;
  cfg.momentum = params.momentum;
  cfg.batch = params.batch;
  cfg.seed = params.seed;
  return train(model, unlearn_set, cfg);
}

RepairOutcome verify_repair(const Model& model, const Dataset& clean_test,
                            const std::vector<RepairTrigger>& triggers) {
  if (triggers.empty())
    throw StateError("verify_repair: no triggers to verify against");
  RepairOutcome out;
  for (const RepairTrigger& t : triggers)
    out.trigger_asr.push_back(
        flip_rate(model, clean_test, t.delta, t.sources, t.target));
  out.nsr = evaluate(model, clean_test).accuracy;
  return out;
}

}  // namespace istr
