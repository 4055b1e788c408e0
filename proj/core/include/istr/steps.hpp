#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "istr/dataset.hpp"
#include "istr/model.hpp"
#include "istr/tensor.hpp"

namespace istr {

// One label-mutation run: an additive perturbation T grown by signed-gradient
// epochs. Each epoch does
//   T <- clamp((T + step * sign(g)) * E, -x, 1 - x)
// so x + T always stays inside [0,1] and the envelope E throttles every pixel
// it marks as low priority. E = nullptr means all-ones.
struct MutationResult {
  Tensor trigger;                  // final additive T
  Tensor trigger_at_flip;          // T at the first flip (empty if none)
  std::optional<int> flip_epoch;   // 1-based epoch of the first flip
  int flipped_to = -1;             // class the first flip landed on
  int final_prediction = -1;       // argmax after the last epoch run
  int epochs_run = 0;
  int optimization_runs = 1;
  std::vector<int> trace;          // prediction after each epoch, size epochs_run
};

// Pushes x away from its own label l_o (loss ascent). Stops at the first
// flipped prediction when stop_at_flip, otherwise runs the whole budget and
// still records where the first flip happened.
MutationResult steps_opposite(const Model& model, const Tensor& image, int label,
                              const Tensor* envelope, float step, int budget,
                              bool stop_at_flip = true);

// Pulls x toward an explicit target class (loss descent on the target).
MutationResult steps_toward(const Model& model, const Tensor& image, int label,
                            int target, const Tensor* envelope, float step,
                            int budget, bool stop_at_target = true);

// Classic all-target traversal: one toward-run per class other than l_o.
struct TraversalResult {
  std::vector<MutationResult> per_target;  // indexed by class; entry for l_o empty
  std::vector<int> targets;                // classes actually run
  int optimization_runs = 0;               // always class_count - 1
};
TraversalResult steps_unconstrained(const Model& model, const Tensor& image,
                                    int label, float step, int budget);

// Flip bookkeeping across a scan. counts(m, n) = class-m samples whose first
// flip landed on n; scanned[m] = correctly classified class-m samples run.
struct LeadMatrix {
  int class_count = 0;
  std::vector<int64_t> counts;
  std::vector<int> scanned;

  explicit LeadMatrix(int classes = 0)
      : class_count(classes),
        counts(static_cast<size_t>(classes) * classes, 0),
        scanned(classes, 0) {}
  int64_t& at(int m, int n) { return counts[static_cast<size_t>(m) * class_count + n]; }
  int64_t at(int m, int n) const { return counts[static_cast<size_t>(m) * class_count + n]; }
  int64_t flips(int m) const;
  double rate(int m) const;  // flips(m) / scanned[m], 0 when nothing scanned
};

struct ScanRecord {
  int index = -1;       // dataset index
  int label = -1;
  int flip_epoch = -1;  // -1 = never flipped within budget
  int flipped_to = -1;
};

struct ScanParams {
  float step = 1.0f / 255.0f;
  int budget = 200;
  int samples_per_class = 40;
  uint64_t seed = 1;
};

struct ScanResult {
  LeadMatrix lead;
  std::vector<ScanRecord> records;  // one per correctly classified scanned sample
  int class_count = 0;
  int budget = 0;
  int64_t optimization_runs = 0;    // one opposite run per scanned sample
};

// Runs steps_opposite over a per-class sample of the dataset. Only samples
// the model already classifies correctly contribute. class_envelopes, when
// given, must hold one envelope per class (applied by sample label).
ScanResult detect_scan(const Model& model, const Dataset& data,
                       const std::vector<Tensor>* class_envelopes,
                       const ScanParams& params);

// Two-cluster 1-D Lloyd split seeded with the farthest pair (min and max).
// Ties fall to the lower cluster, so an all-equal input yields an empty
// upper cluster.
struct Kmeans2 {
  double lower_centroid = 0.0;
  double upper_centroid = 0.0;
  std::vector<int> upper;  // indices assigned to the upper cluster
  int iterations = 0;
};
Kmeans2 kmeans2(const std::vector<double>& values);

struct SuspectPair {
  int source = -1;
  int target = -1;
  double lead_fraction = 0.0;  // counts(m,n) / scanned[m]
};

struct ScreenParams {
  double min_gap = 0.20;      // required rate lead over the lower-cluster mean
  double saturation = 0.85;   // fallback when even the lower cluster is hot
};

struct ScreenResult {
  std::vector<double> rates;        // converged mutation rate per class
  std::vector<int> flagged;         // suspect source classes
  std::vector<SuspectPair> pairs;   // flagged (source, target) pairs
  double lower_mean = 0.0;
  bool saturated = false;           // all-classes-hot fallback used
  std::pair<int, int> top_biased_pair{-1, -1};
  double top_biased_fraction = 0.0;
};

// Splits per-class mutation rates with kmeans2 and flags upper-cluster
// classes whose rate clears the lower-cluster mean by min_gap. When the
// lower cluster itself sits above the saturation level (every class is a
// source, so no cold reference exists) every hot class is flagged instead.
// Targets per flagged class come from a kmeans2 split of its lead row.
ScreenResult screen_suspects(const LeadMatrix& lead, const ScreenParams& params = {});

struct InvertParams {
  float step = 1.0f / 255.0f;
  int budget = 200;
  int max_samples = 40;        // source-class samples to run
  int consolidate_epochs = 0;  // optional shared refinement of the mean trigger
  uint64_t seed = 1;
};

struct InversionResult {
  Tensor trigger;            // additive reverse trigger for the pair
  int samples_run = 0;
  int samples_used = 0;      // runs whose endpoint realized the pair
  double hit_fraction = 0.0;
  bool from_flip_fallback = false;  // aggregated flip-time triggers instead
};

// Reverse-trigger recovery for one (source, target) pair: full-budget
// opposite runs on source samples under the envelope, averaging the runs
// that end up predicted as the target. If no run ends there, falls back to
// flip-time triggers of runs that flipped to the target.
InversionResult invert_pair(const Model& model, const Dataset& data, int source,
                            int target, const Tensor* envelope,
                            const InvertParams& params);

struct L1InversionParams {
  float weight = 0.01f;   // L1 penalty on the mask
  int budget = 300;       // Adam iterations
  float lr = 0.1f;
  int max_samples = 40;
  uint64_t seed = 1;
};

struct L1Inversion {
  Tensor mask;     // in [0,1]
  Tensor pattern;  // in [0,1]
  double mask_l1 = 0.0;
  double final_loss = 0.0;
};

// Reference optimization-based inversion: sigmoid-parameterized mask and
// pattern trained with Adam to force source samples into the target under an
// L1 mask penalty. Used as the comparison baseline for the steps family.
L1Inversion baseline_l1_inversion(const Model& model, const Dataset& data,
                                  int source, int target,
                                  const L1InversionParams& params);

}  // namespace istr
