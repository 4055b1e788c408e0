#include "istr/dms.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "istr/errors.hpp"
#include "istr/rng.hpp"

namespace istr {

DifferentialVariants differential_variants(const Tensor& image, int patch,
                                           int stride, float fill) {
  if (static_cast<int>(image.shape().size()) != 3)
    throw DimensionError("differential_variants expects a [C,H,W] image, got " +
                         shape_str(image.shape()));
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (patch < 1 || patch > std::min(h, w))
    throw ArgumentError("patch size " + std::to_string(patch) +
                        " must lie in [1, min(H,W)]");
  if (stride < 1) throw ArgumentError("stride must be at least 1");

  if (fill < 0.0f) {
    double sum = 0.0;
    for (int64_t i = 0; i < image.numel(); ++i) sum += image.data()[i];
    fill = static_cast<float>(sum / image.numel());
  }

  DifferentialVariants out;
  out.patch = patch;
  out.stride = stride;
  for (int r = 0; r + patch <= h; r += stride)
    for (int cc = 0; cc + patch <= w; cc += stride) out.origins.emplace_back(r, cc);

  const int v = static_cast<int>(out.origins.size());
  out.batch = Tensor({v, c, h, w});
  const int64_t img_size = image.numel();
  for (int k = 0; k < v; ++k) {
    float* dst = out.batch.data() + k * img_size;
    std::memcpy(dst, image.data(), sizeof(float) * img_size);
    auto [r0, c0] = out.origins[k];
    for (int ch = 0; ch < c; ++ch)
      for (int r = r0; r < r0 + patch; ++r)
        for (int cc = c0; cc < c0 + patch; ++cc)
          dst[(static_cast<int64_t>(ch) * h + r) * w + cc] = fill;
  }
  return out;
}

Tensor priority_map(const Model& model, const Model& shadow, const Tensor& image,
                    int patch, int stride, float fill) {
  if (model.arch().input != shadow.arch().input ||
      model.class_count() != shadow.class_count())
    throw ArchError("priority_map: model and shadow disagree on input shape or "
                    "class count");
  if (image.shape() != model.arch().input)
    throw DimensionError("priority_map: image shape " + shape_str(image.shape()) +
                         " does not match model input " +
                         shape_str(model.arch().input));

  DifferentialVariants vars = differential_variants(image, patch, stride, fill);
  const int v = static_cast<int>(vars.origins.size());
  Tensor base_f = model.predict_logits(image);
  Tensor base_s = shadow.predict_logits(image);
  Tensor out_f = model.predict_logits(vars.batch);
  Tensor out_s = shadow.predict_logits(vars.batch);
  const int classes = model.class_count();

  std::vector<double> score(v);
  for (int k = 0; k < v; ++k) {
    double df = 0.0, ds = 0.0;
    for (int j = 0; j < classes; ++j) {
      double a = static_cast<double>(base_f.data()[j]) - out_f.data()[k * classes + j];
      double b = static_cast<double>(base_s.data()[j]) - out_s.data()[k * classes + j];
      df += a * a;
      ds += b * b;
    }
    score[k] = std::sqrt(df) - std::sqrt(ds);
  }

  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor priority(image.shape());
  std::vector<double> pixel(static_cast<size_t>(h) * w,
                            -std::numeric_limits<double>::infinity());
  for (int k = 0; k < v; ++k) {
    auto [r0, c0] = vars.origins[k];
    for (int r = r0; r < r0 + patch; ++r)
      for (int cc = c0; cc < c0 + patch; ++cc) {
        double& p = pixel[static_cast<size_t>(r) * w + cc];
        p = std::max(p, score[k]);
      }
  }
  for (int ch = 0; ch < c; ++ch)
    for (int r = 0; r < h; ++r)
      for (int cc = 0; cc < w; ++cc) {
        double p = pixel[static_cast<size_t>(r) * w + cc];
        priority.at3(ch, r, cc) =
            std::isinf(p) ? 0.0f : static_cast<float>(p);
      }
  return priority;
}

namespace {

// Nearest-rank percentile of a sorted ascending vector.
double percentile(const std::vector<float>& sorted, double q) {
  int64_t n = static_cast<int64_t>(sorted.size());
  int64_t rank = static_cast<int64_t>(std::ceil(q / 100.0 * n));
  rank = std::clamp<int64_t>(rank, 1, n);
  return sorted[rank - 1];
}

}  // namespace

SliceMask middle_slice(const Tensor& priority, double q_low, double q_high,
                       float minimum) {
  if (!(q_low >= 0.0 && q_low < q_high && q_high <= 100.0))
    throw ArgumentError("middle_slice requires 0 <= q_low < q_high <= 100");
  if (!(minimum > 0.0f && minimum <= 1.0f))
    throw ArgumentError("middle_slice minimum must lie in (0,1]");

  std::vector<float> positive;
  for (int64_t i = 0; i < priority.numel(); ++i)
    if (priority.data()[i] > 0.0f) positive.push_back(priority.data()[i]);

  SliceMask res;
  res.minimum = minimum;
  res.mask = Tensor::full(priority.shape(), minimum);
  if (positive.empty()) {
    res.no_positive = true;
    return res;
  }
  std::sort(positive.begin(), positive.end());
  res.r_low = percentile(positive, q_low);
  res.r_high = percentile(positive, q_high);

  for (int64_t i = 0; i < priority.numel(); ++i) {
    double s = priority.data()[i];
    bool in_band = res.r_low == res.r_high ? s == res.r_high
                                           : (s > res.r_low && s <= res.r_high);
    if (!in_band) continue;
    double norm = res.r_low == res.r_high
                      ? 1.0
                      : (s - res.r_low) / (res.r_high - res.r_low);
    res.mask.data()[i] = std::max(static_cast<float>(norm), minimum);
  }
  return res;
}

Tensor aggregate_masks(const std::vector<SliceMask>& masks, MaskAggregate mode) {
  if (masks.empty()) throw ArgumentError("aggregate_masks: no masks given");
  const Shape shape = masks[0].mask.shape();
  const float minimum = masks[0].minimum;
  for (const SliceMask& m : masks) {
    if (m.mask.shape() != shape)
      throw DimensionError("aggregate_masks: mask shapes disagree");
    if (m.minimum != minimum)
      throw ArgumentError("aggregate_masks: mask floors disagree");
  }

  Tensor out(shape);
  for (int64_t i = 0; i < out.numel(); ++i) {
    if (mode == MaskAggregate::Max) {
      float v = masks[0].mask.data()[i];
      for (const SliceMask& m : masks) v = std::max(v, m.mask.data()[i]);
      out.data()[i] = v;
    } else {
      double sum = 0.0;
      int n = 0;
      for (const SliceMask& m : masks) {
        float v = m.mask.data()[i];
        if (v > minimum) {
          sum += v;
          ++n;
        }
      }
      out.data()[i] = n ? static_cast<float>(sum / n) : minimum;
    }
  }
  return out;
}

Tensor dms_class_envelope(const Model& model, const Model& shadow,
                          const Dataset& data, int class_label,
                          const DmsParams& params) {
  data.validate();
  if (class_label < 0 || class_label >= data.class_count)
    throw ArgumentError("dms_class_envelope: class out of range");
  if (params.samples_per_class <= 0)
    throw ArgumentError("dms_class_envelope: samples_per_class must be positive");

  std::vector<int> idx;
  for (int i = 0; i < data.size(); ++i)
    if (data.labels[i] == class_label) idx.push_back(i);
  if (idx.empty())
    throw ArgumentError("dms_class_envelope: no samples of class " +
                        std::to_string(class_label));
  Rng rng(params.seed);
  rng.shuffle(idx);
  if (static_cast<int>(idx.size()) > params.samples_per_class)
    idx.resize(params.samples_per_class);

  std::vector<SliceMask> masks(idx.size());
  for (size_t k = 0; k < idx.size(); ++k) {
    Tensor prio = priority_map(model, shadow, data.image(idx[k]), params.patch,
                               params.stride, params.fill);
    masks[k] = middle_slice(prio, params.q_low, params.q_high, params.minimum);
  }
  return aggregate_masks(masks, params.aggregate);
}

}  // namespace istr
