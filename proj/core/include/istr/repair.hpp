#pragma once

#include <cstdint>
#include <vector>

#include "istr/dataset.hpp"
#include "istr/model.hpp"
#include "istr/tensor.hpp"

namespace istr {

// A recovered trigger scheduled for unlearning: stamp `delta` additively on
// samples of the source classes while keeping their true labels, so the
// model re-learns that the trigger means nothing.
struct RepairTrigger {
  Tensor delta;              // additive reverse trigger
  int target = -1;           // class the trigger used to force
  std::vector<int> sources;  // empty = every class except target
};

// Returns clean + ceil(mix * N) stamped source-class samples (split evenly
// across triggers), labels kept. mix 0 returns the clean set unchanged; an
// empty trigger list is a StateError.
Dataset build_unlearn_set(const Dataset& clean,
                          const std::vector<RepairTrigger>& triggers, float mix,
                          uint64_t seed);

struct UnlearnParams {
  int epochs = 5;
  float lr = 0.001f;  // conventionally a tenth of the training rate
  float momentum = 0.9f;
  int batch = 64;
  uint64_t seed = 1;
};

// Fine-tunes the model in place on the unlearning set. epochs 0 leaves every
// parameter byte-identical. Optimizer state starts fresh.
TrainResult unlearn_finetune(Model& model, const Dataset& unlearn_set,
                             const UnlearnParams& params);

struct RepairOutcome {
  std::vector<double> trigger_asr;  // per repair trigger, stamped with delta
  double nsr = 0.0;                 // clean accuracy after repair
};

// Measures what repair achieved: per-trigger attack success under the
// recovered delta and the clean accuracy (NSR).
RepairOutcome verify_repair(const Model& model, const Dataset& clean_test,
                            const std::vector<RepairTrigger>& triggers);

}  // namespace istr
