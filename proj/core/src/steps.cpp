#include "istr/steps.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "istr/errors.hpp"
#include "istr/rng.hpp"
#include "istr/threading.hpp"

namespace istr {

namespace {

float sign_of(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }

int flat_argmax(const Tensor& t) {
  int best = 0;
  for (int64_t i = 1; i < t.numel(); ++i)
    if (t.data()[i] > t.data()[best]) best = static_cast<int>(i);
  return best;
}

void check_mutation_args(const Model& model, const Tensor& image, int label,
                         const Tensor* envelope, float step, int budget) {
  if (budget <= 0)
    throw ArgumentError("mutation budget must be positive, got " +
                        std::to_string(budget));
  if (!(step > 0.0f))
    throw ArgumentError("mutation step must be positive");
  if (image.shape() != model.arch().input)
    throw DimensionError("mutation image shape " + shape_str(image.shape()) +
                         " does not match model input " +
                         shape_str(model.arch().input));
  if (label < 0 || label >= model.class_count())
    throw ArgumentError("mutation label " + std::to_string(label) +
                        " out of range");
  if (envelope) {
    if (envelope->shape() != image.shape())
      throw DimensionError("envelope shape " + shape_str(envelope->shape()) +
                           " does not match image");
    for (int64_t i = 0; i < envelope->numel(); ++i) {
      float e = envelope->data()[i];
      if (!(e >= 0.0f && e <= 1.0f))
        throw ArgumentError("envelope values must lie in [0,1]");
    }
  }
}

// Shared mutation loop. loss ascends away from loss_label when direction > 0
// (opposite mode) or descends toward it when direction < 0 (toward mode).
// stop_pred decides whether a prediction counts as the sought flip.
template <typename StopPred>
MutationResult mutation_run(const Model& model, const Tensor& image,
                            int loss_label, float direction,
                            const Tensor* envelope, float step, int budget,
                            bool stop_early, StopPred stop_pred) {
  const int64_t numel = image.numel();
  MutationResult res;
  res.trigger = Tensor(image.shape());
  Tensor x_adv = image;

  auto record_pred = [&](int epoch, int pred) {
    res.trace.push_back(pred);
    res.final_prediction = pred;
    res.epochs_run = epoch;
    if (!res.flip_epoch && stop_pred(pred)) {
      res.flip_epoch = epoch;
      res.flipped_to = pred;
      res.trigger_at_flip = res.trigger;
    }
  };

  for (int s = 1; s <= budget; ++s) {
    Tape tape;
    Var x = tape.leaf(x_adv, true);
    auto fb = model.forward(tape, x, false);
    int pred = flat_argmax(tape.value(fb.logits));
    if (s > 1) {
      record_pred(s - 1, pred);
      if (stop_early && res.flip_epoch) return res;
    }
    Var loss = tape.softmax_cross_entropy(fb.logits, {loss_label});
    tape.backward(loss);
    const Tensor& g = tape.grad(x);
    float* t = res.trigger.data();
    const float* gd = g.data();
    const float* xd = image.data();
    for (int64_t i = 0; i < numel; ++i) {
      float v = t[i] + direction * step * sign_of(gd[i]);
      if (envelope) v *= envelope->data()[i];
      t[i] = std::clamp(v, -xd[i], 1.0f - xd[i]);
    }
    for (int64_t i = 0; i < numel; ++i) x_adv.data()[i] = xd[i] + t[i];
  }
  // Predictions lag the updates by one epoch inside the loop; score the
  // final state explicitly.
  std::vector<int> pred = model.predict(x_adv);
  record_pred(budget, pred[0]);
  return res;
}

}  // namespace

MutationResult steps_opposite(const Model& model, const Tensor& image, int label,
                              const Tensor* envelope, float step, int budget,
                              bool stop_at_flip) {
  check_mutation_args(model, image, label, envelope, step, budget);
  return mutation_run(model, image, label, +1.0f, envelope, step, budget,
                      stop_at_flip, [label](int pred) { return pred != label; });
}

MutationResult steps_toward(const Model& model, const Tensor& image, int label,
                            int target, const Tensor* envelope, float step,
                            int budget, bool stop_at_target) {
  check_mutation_args(model, image, label, envelope, step, budget);
  if (target < 0 || target >= model.class_count() || target == label)
    throw ArgumentError("toward-target must name a class other than the label");
  return mutation_run(model, image, target, -1.0f, envelope, step, budget,
                      stop_at_target, [target](int pred) { return pred == target; });
}

TraversalResult steps_unconstrained(const Model& model, const Tensor& image,
                                    int label, float step, int budget) {
  check_mutation_args(model, image, label, nullptr, step, budget);
  TraversalResult res;
  res.per_target.resize(model.class_count());
  for (int t = 0; t < model.class_count(); ++t) {
    if (t == label) continue;
    res.per_target[t] =
        steps_toward(model, image, label, t, nullptr, step, budget, true);
    res.targets.push_back(t);
    ++res.optimization_runs;
  }
  return res;
}

int64_t LeadMatrix::flips(int m) const {
  int64_t total = 0;
  for (int n = 0; n < class_count; ++n) total += at(m, n);
  return total;
}

double LeadMatrix::rate(int m) const {
  return scanned[m] > 0 ? static_cast<double>(flips(m)) / scanned[m] : 0.0;
}

ScanResult detect_scan(const Model& model, const Dataset& data,
                       const std::vector<Tensor>* class_envelopes,
                       const ScanParams& params) {
  if (data.size() == 0) throw ArgumentError("detect_scan: dataset is empty");
  data.validate();
  if (data.class_count != model.class_count())
    throw ArgumentError("detect_scan: dataset has " +
                        std::to_string(data.class_count) +
                        " classes but the model expects " +
                        std::to_string(model.class_count()));
  if (params.samples_per_class <= 0)
    throw ArgumentError("detect_scan: samples_per_class must be positive");
  if (params.budget <= 0)
    throw ArgumentError("detect_scan: budget must be positive");
  if (!(params.step > 0.0f))
    throw ArgumentError("detect_scan: step must be positive");
  const int classes = model.class_count();
  if (class_envelopes) {
    if (static_cast<int>(class_envelopes->size()) != classes)
      throw ArgumentError("detect_scan: need one envelope per class");
    for (const Tensor& e : *class_envelopes)
      if (e.shape() != data.image_shape())
        throw DimensionError("detect_scan: envelope shape mismatch");
  }

  // Per-class deterministic candidate draw.
  Rng base(params.seed);
  auto by_class = indices_by_class(data);
  std::vector<int> chosen;
  for (int c = 0; c < classes; ++c) {
    Rng sub = base.fork(static_cast<uint64_t>(c));
    auto& idx = by_class[c];
    sub.shuffle(idx);
    int take = std::min<int>(params.samples_per_class, static_cast<int>(idx.size()));
    for (int k = 0; k < take; ++k) chosen.push_back(idx[k]);
  }

  // Only samples the model already gets right contribute to the scan.
  std::vector<int> kept;
  if (!chosen.empty()) {
    Shape bshape = data.image_shape();
    bshape.insert(bshape.begin(), static_cast<int>(chosen.size()));
    Tensor batch(bshape);
    int64_t stride = shape_numel(data.image_shape());
    for (size_t k = 0; k < chosen.size(); ++k)
      std::memcpy(batch.data() + k * stride, data.image(chosen[k]).data(),
                  sizeof(float) * stride);
    std::vector<int> preds = model.predict(batch);
    for (size_t k = 0; k < chosen.size(); ++k)
      if (preds[k] == data.labels[chosen[k]]) kept.push_back(chosen[k]);
  }

  ScanResult res;
  res.class_count = classes;
  res.budget = params.budget;
  res.lead = LeadMatrix(classes);
  res.records.resize(kept.size());

#pragma omp parallel for schedule(static) num_threads(istr::thread_count())
  for (int64_t k = 0; k < static_cast<int64_t>(kept.size()); ++k) {
    int i = kept[k];
    int label = data.labels[i];
    const Tensor* env =
        class_envelopes ? &(*class_envelopes)[label] : nullptr;
    MutationResult m = steps_opposite(model, data.image(i), label, env,
                                      params.step, params.budget, true);
    ScanRecord rec;
    rec.index = i;
    rec.label = label;
    if (m.flip_epoch) {
      rec.flip_epoch = *m.flip_epoch;
      rec.flipped_to = m.flipped_to;
    }
    res.records[k] = rec;
  }

  for (const ScanRecord& rec : res.records) {
    ++res.lead.scanned[rec.label];
    ++res.optimization_runs;
    if (rec.flip_epoch >= 0) ++res.lead.at(rec.label, rec.flipped_to);
  }
  return res;
}

Kmeans2 kmeans2(const std::vector<double>& values) {
  if (values.empty()) throw ArgumentError("kmeans2 requires at least one value");
  Kmeans2 res;
  auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  res.lower_centroid = *lo_it;
  res.upper_centroid = *hi_it;
  if (res.lower_centroid == res.upper_centroid) return res;  // degenerate: no split

  std::vector<uint8_t> assign(values.size(), 0);
  for (int iter = 1; iter <= 100; ++iter) {
    bool changed = false;
    for (size_t i = 0; i < values.size(); ++i) {
      double dlo = std::abs(values[i] - res.lower_centroid);
      double dhi = std::abs(values[i] - res.upper_centroid);
      uint8_t up = dhi < dlo ? 1 : 0;  // ties stay in the lower cluster
      if (up != assign[i]) {
        assign[i] = up;
        changed = true;
      }
    }
    double sum_lo = 0, sum_hi = 0;
    int n_lo = 0, n_hi = 0;
    for (size_t i = 0; i < values.size(); ++i) {
      if (assign[i]) { sum_hi += values[i]; ++n_hi; }
      else           { sum_lo += values[i]; ++n_lo; }
    }
    if (n_lo) res.lower_centroid = sum_lo / n_lo;
    if (n_hi) res.upper_centroid = sum_hi / n_hi;
    res.iterations = iter;
    if (!changed && iter > 1) break;
  }
  for (size_t i = 0; i < values.size(); ++i)
    if (assign[i]) res.upper.push_back(static_cast<int>(i));
  return res;
}

ScreenResult screen_suspects(const LeadMatrix& lead, const ScreenParams& params) {
  if (lead.class_count <= 0)
    throw ArgumentError("screen_suspects: empty lead matrix");
  ScreenResult res;
  const int classes = lead.class_count;
  res.rates.resize(classes);
  for (int m = 0; m < classes; ++m) res.rates[m] = lead.rate(m);

  Kmeans2 split = kmeans2(res.rates);
  std::vector<uint8_t> in_upper(classes, 0);
  for (int i : split.upper) in_upper[i] = 1;
  double lower_sum = 0;
  int lower_n = 0;
  for (int m = 0; m < classes; ++m)
    if (!in_upper[m]) { lower_sum += res.rates[m]; ++lower_n; }
  res.lower_mean = lower_n ? lower_sum / lower_n : 0.0;

  if (res.lower_mean >= params.saturation) {
    // Every class runs hot: there is no cold reference cluster, which is
    // exactly what an everyone-is-a-source attack produces. Flag all hot
    // classes and let per-row target splits sort out the pairs.
    res.saturated = true;
    for (int m = 0; m < classes; ++m)
      if (res.rates[m] >= params.saturation) res.flagged.push_back(m);
  } else {
    for (int m : split.upper)
      if (res.rates[m] - res.lower_mean >= params.min_gap) res.flagged.push_back(m);
  }

  for (int m : res.flagged) {
    std::vector<double> row(classes);
    for (int n = 0; n < classes; ++n) row[n] = static_cast<double>(lead.at(m, n));
    Kmeans2 rs = kmeans2(row);
    for (int n : rs.upper) {
      SuspectPair p;
      p.source = m;
      p.target = n;
      p.lead_fraction = lead.scanned[m] > 0
                            ? static_cast<double>(lead.at(m, n)) / lead.scanned[m]
                            : 0.0;
      res.pairs.push_back(p);
    }
  }

  for (int m = 0; m < classes; ++m) {
    if (lead.scanned[m] <= 0) continue;
    for (int n = 0; n < classes; ++n) {
      if (n == m) continue;
      double frac = static_cast<double>(lead.at(m, n)) / lead.scanned[m];
      if (frac > res.top_biased_fraction) {
        res.top_biased_fraction = frac;
        res.top_biased_pair = {m, n};
      }
    }
  }
  return res;
}

InversionResult invert_pair(const Model& model, const Dataset& data, int source,
                            int target, const Tensor* envelope,
                            const InvertParams& params) {
  data.validate();
  if (source < 0 || source >= model.class_count() || target < 0 ||
      target >= model.class_count() || source == target)
    throw ArgumentError("invert_pair: bad (source, target) pair");
  if (params.max_samples <= 0)
    throw ArgumentError("invert_pair: max_samples must be positive");

  std::vector<int> idx;
  for (int i = 0; i < data.size(); ++i)
    if (data.labels[i] == source) idx.push_back(i);
  if (idx.empty())
    throw ArgumentError("invert_pair: no samples of class " +
                        std::to_string(source));
  Rng rng(params.seed);
  rng.shuffle(idx);
  if (static_cast<int>(idx.size()) > params.max_samples)
    idx.resize(params.max_samples);

  std::vector<MutationResult> runs(idx.size());
#pragma omp parallel for schedule(static) num_threads(istr::thread_count())
  for (int64_t k = 0; k < static_cast<int64_t>(idx.size()); ++k)
    runs[k] = steps_opposite(model, data.image(idx[k]), source, envelope,
                             params.step, params.budget, false);

  InversionResult res;
  res.samples_run = static_cast<int>(idx.size());
  Tensor acc(data.image_shape());
  std::vector<double> sum(acc.numel(), 0.0);
  int used = 0;
  for (const MutationResult& r : runs)
    if (r.final_prediction == target) {
      for (int64_t i = 0; i < r.trigger.numel(); ++i) sum[i] += r.trigger.data()[i];
      ++used;
    }
  if (used == 0) {
    // Nothing converged onto the target; fall back to the flip-time triggers
    // of runs that at least passed through it.
    res.from_flip_fallback = true;
    for (const MutationResult& r : runs)
      if (r.flip_epoch && r.flipped_to == target) {
        for (int64_t i = 0; i < r.trigger_at_flip.numel(); ++i)
          sum[i] += r.trigger_at_flip.data()[i];
        ++used;
      }
  }
  res.samples_used = used;
  res.hit_fraction =
      res.samples_run ? static_cast<double>(used) / res.samples_run : 0.0;
  res.trigger = Tensor(data.image_shape());
  if (used > 0)
    for (int64_t i = 0; i < res.trigger.numel(); ++i)
      res.trigger.data()[i] = static_cast<float>(sum[i] / used);

  if (used > 0 && params.consolidate_epochs > 0) {
    // Joint refinement: one shared trigger descended toward the target over
    // all participating samples at once.
    std::vector<Tensor> imgs;
    for (size_t k = 0; k < runs.size(); ++k) {
      bool take = res.from_flip_fallback
                      ? (runs[k].flip_epoch && runs[k].flipped_to == target)
                      : (runs[k].final_prediction == target);
      if (take) imgs.push_back(data.image(idx[k]));
    }
    Tensor& T = res.trigger;
    for (int e = 0; e < params.consolidate_epochs; ++e) {
      std::vector<double> gsum(T.numel(), 0.0);
      for (const Tensor& img : imgs) {
        Tensor x_adv = img;
        for (int64_t i = 0; i < T.numel(); ++i)
          x_adv.data()[i] =
              std::clamp(img.data()[i] + T.data()[i], 0.0f, 1.0f);
        Tape tape;
        Var x = tape.leaf(x_adv, true);
        auto fb = model.forward(tape, x, false);
        Var loss = tape.softmax_cross_entropy(fb.logits, {target});
        tape.backward(loss);
        const Tensor& g = tape.grad(x);
        for (int64_t i = 0; i < T.numel(); ++i) gsum[i] += g.data()[i];
      }
      for (int64_t i = 0; i < T.numel(); ++i) {
        float v = T.data()[i] - params.step * sign_of(static_cast<float>(gsum[i]));
        if (envelope) v *= envelope->data()[i];
        T.data()[i] = std::clamp(v, -1.0f, 1.0f);
      }
    }
  }
  return res;
}

namespace {

struct AdamState {
  Tensor m1, m2;
  int t = 0;
  explicit AdamState(const Shape& s) : m1(s), m2(s) {}
  void step(Tensor& param, const Tensor& grad, float lr) {
    ++t;
    const float b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
    float c1 = 1.0f - std::pow(b1, static_cast<float>(t));
    float c2 = 1.0f - std::pow(b2, static_cast<float>(t));
    for (int64_t i = 0; i < param.numel(); ++i) {
      float g = grad.data()[i];
      m1.data()[i] = b1 * m1.data()[i] + (1.0f - b1) * g;
      m2.data()[i] = b2 * m2.data()[i] + (1.0f - b2) * g * g;
      float mh = m1.data()[i] / c1;
      float vh = m2.data()[i] / c2;
      param.data()[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
};

}  // namespace

L1Inversion baseline_l1_inversion(const Model& model, const Dataset& data,
                                  int source, int target,
                                  const L1InversionParams& params) {
  data.validate();
  if (source < 0 || source >= model.class_count() || target < 0 ||
      target >= model.class_count() || source == target)
    throw ArgumentError("baseline_l1_inversion: bad (source, target) pair");
  if (params.budget <= 0 || !(params.lr > 0.0f) || params.max_samples <= 0)
    throw ArgumentError("baseline_l1_inversion: bad optimization parameters");
  if (params.weight < 0.0f)
    throw ArgumentError("baseline_l1_inversion: weight must be non-negative");

  std::vector<int> idx;
  for (int i = 0; i < data.size(); ++i)
    if (data.labels[i] == source) idx.push_back(i);
  if (idx.empty())
    throw ArgumentError("baseline_l1_inversion: no samples of class " +
                        std::to_string(source));
  Rng rng(params.seed);
  rng.shuffle(idx);
  if (static_cast<int>(idx.size()) > params.max_samples)
    idx.resize(params.max_samples);

  const Shape img_shape = data.image_shape();
  const int64_t dim = shape_numel(img_shape);
  const int n = static_cast<int>(idx.size());
  Tensor rows({n, static_cast<int>(dim)});
  for (int k = 0; k < n; ++k)
    std::memcpy(rows.data() + k * dim, data.image(idx[k]).data(),
                sizeof(float) * dim);
  std::vector<int> labels(n, target);

  Shape flat{static_cast<int>(dim)};
  Tensor mask_logit = Tensor::full(flat, -3.0f);  // start nearly transparent
  Tensor pattern_logit(flat);                     // start at mid gray
  AdamState mask_opt(flat), pattern_opt(flat);

  Shape batch_shape = img_shape;
  batch_shape.insert(batch_shape.begin(), n);

  double loss_value = 0.0;
  for (int it = 0; it < params.budget; ++it) {
    Tape tape;
    Var ml = tape.leaf(mask_logit, true);
    Var pl = tape.leaf(pattern_logit, true);
    Var mask = tape.sigmoid(ml);
    Var pattern = tape.sigmoid(pl);
    Var blended = tape.blend_rows(rows, mask, pattern);
    Var imgs = tape.reshape(blended, batch_shape);
    auto fb = model.forward(tape, imgs, false);
    Var ce = tape.softmax_cross_entropy(fb.logits, labels);
    Var loss = ce;
    if (params.weight > 0.0f)
      loss = tape.add(ce, tape.scale(tape.sum_abs(mask), params.weight));
    tape.backward(loss);
    loss_value = tape.value(loss).data()[0];
    mask_opt.step(mask_logit, tape.grad(ml), params.lr);
    pattern_opt.step(pattern_logit, tape.grad(pl), params.lr);
  }

  L1Inversion res;
  res.mask = Tensor(img_shape);
  res.pattern = Tensor(img_shape);
  for (int64_t i = 0; i < dim; ++i) {
    res.mask.data()[i] = 1.0f / (1.0f + std::exp(-mask_logit.data()[i]));
    res.pattern.data()[i] = 1.0f / (1.0f + std::exp(-pattern_logit.data()[i]));
    res.mask_l1 += res.mask.data()[i];
  }
  res.final_loss = loss_value;
  return res;
}

}  // namespace istr
