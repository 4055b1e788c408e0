#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "istr/dataset.hpp"
#include "istr/model.hpp"
#include "istr/tensor.hpp"

namespace istr {

// Occlusion grid over one image: every variant is the image with exactly one
// patch x patch square replaced by a fill value; all other pixels are
// bit-identical to the original.
struct DifferentialVariants {
  Tensor batch;                              // [V, C, H, W]
  std::vector<std::pair<int, int>> origins;  // top-left (row, col) per variant
  int patch = 0;
  int stride = 0;
};

// Grid positions step by `stride` and are clipped so every patch fits; a
// 28x28 image with patch 4, stride 4 yields a 7x7 grid of 49 variants.
// fill < 0 uses the image mean.
DifferentialVariants differential_variants(const Tensor& image, int patch,
                                           int stride, float fill = -1.0f);

// Per-pixel differential priority of `image` under `model` against the
// clean reference `shadow`:
//   score(variant) = ||f(x) - f(x_v)||_2 - ||f_s(x) - f_s(x_v)||_2
// on pre-argmax outputs; each pixel takes the max score over every variant
// whose patch covers it. Two identical models give an all-zero map.
Tensor priority_map(const Model& model, const Model& shadow, const Tensor& image,
                    int patch, int stride, float fill = -1.0f);

struct SliceMask {
  Tensor mask;          // image-shaped, values in [minimum, 1]
  float minimum = 1e-3f;
  double r_low = 0.0;   // band edges: in-band means r_low < score <= r_high
  double r_high = 0.0;
  bool no_positive = false;  // no positive scores existed; mask is all-minimum
};

// Keeps the middle slice of the positive scores: nearest-rank percentiles
// q_low / q_high of the positive values define (r_low, r_high]; in-band
// scores are normalized to (0, 1], everything else drops to `minimum`.
SliceMask middle_slice(const Tensor& priority, double q_low = 60.0,
                       double q_high = 95.0, float minimum = 1e-3f);

enum class MaskAggregate { Mean, Max };

// Combines per-sample slice masks into one envelope. Mean mode averages the
// in-band values of the samples that kept a pixel (minimum when none did);
// max mode keeps the largest value, so the support is the union.
Tensor aggregate_masks(const std::vector<SliceMask>& masks,
                       MaskAggregate mode = MaskAggregate::Mean);

struct DmsParams {
  int patch = 4;
  int stride = 4;
  float fill = -1.0f;  // < 0: per-image mean
  double q_low = 60.0;
  double q_high = 95.0;
  float minimum = 1e-3f;
  int samples_per_class = 8;
  MaskAggregate aggregate = MaskAggregate::Mean;
  uint64_t seed = 1;
};

// Full differential masking pass for one class: sample class-m images,
// score them against the shadow model, slice each, and aggregate.
Tensor dms_class_envelope(const Model& model, const Model& shadow,
                          const Dataset& data, int class_label,
                          const DmsParams& params);

}  // namespace istr
