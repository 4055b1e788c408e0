#include "istr/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <set>

#include "istr/errors.hpp"

namespace istr {

DetectionScore score_detection(const ScreenResult& screen,
                               const DetectionTruth& truth) {
  if (truth.class_count <= 0)
    throw ArgumentError("score_detection: class_count must be positive");
  std::set<int> truth_classes(truth.classes.begin(), truth.classes.end());
  std::set<int> flagged(screen.flagged.begin(), screen.flagged.end());

  DetectionScore res;
  int correct = 0;
  for (int c = 0; c < truth.class_count; ++c) {
    bool is_source = truth_classes.count(c) > 0;
    bool is_flagged = flagged.count(c) > 0;
    if (is_source == is_flagged) ++correct;
    if (!is_source && is_flagged) ++res.false_flagged;
  }
  res.accuracy = static_cast<double>(correct) / truth.class_count;

  if (truth_classes.empty()) {
    res.tpr_class = 1.0;
  } else {
    int hit = 0;
    for (int c : truth_classes)
      if (flagged.count(c)) ++hit;
    res.tpr_class = static_cast<double>(hit) / truth_classes.size();
  }

  std::set<std::pair<int, int>> found;
  for (const SuspectPair& p : screen.pairs) found.insert({p.source, p.target});
  if (truth.pairs.empty()) {
    res.tpr_pair = 1.0;
  } else {
    int hit = 0;
    for (const auto& p : truth.pairs)
      if (found.count(p)) ++hit;
    res.tpr_pair = static_cast<double>(hit) / truth.pairs.size();
  }
  return res;
}

double apd(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("apd: shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  double sum = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    sum += std::abs(static_cast<double>(a.data()[i]) - b.data()[i]);
  return sum / a.numel();
}

namespace {

double flip_fraction(const Model& model, const Dataset& data,
                     const std::vector<int>& eligible, int target,
                     const std::function<Tensor(const Tensor&)>& stamp) {
  Shape bshape = data.image_shape();
  bshape.insert(bshape.begin(), static_cast<int>(eligible.size()));
  Tensor batch(bshape);
  int64_t stride = shape_numel(data.image_shape());
  for (size_t k = 0; k < eligible.size(); ++k) {
    Tensor stamped = stamp(data.image(eligible[k]));
    std::memcpy(batch.data() + k * stride, stamped.data(),
                sizeof(float) * stride);
  }
  std::vector<int> preds = model.predict(batch);
  int64_t hits = std::count(preds.begin(), preds.end(), target);
  return static_cast<double>(hits) / eligible.size();
}

std::vector<int> eligible_sources(const Dataset& data,
                                  const std::vector<int>& sources, int target) {
  std::vector<int> out;
  for (int i = 0; i < data.size(); ++i) {
    int label = data.labels[i];
    if (label == target) continue;
    if (!sources.empty() &&
        std::find(sources.begin(), sources.end(), label) == sources.end())
      continue;
    out.push_back(i);
  }
  return out;
}

}  // namespace

double flip_rate(const Model& model, const Dataset& data, const Tensor& delta,
                 const std::vector<int>& sources, int target) {
  data.validate();
  if (delta.shape() != data.image_shape())
    throw DimensionError("flip_rate: delta shape mismatch");
  if (target < 0 || target >= model.class_count())
    throw ArgumentError("flip_rate: target out of range");
  std::vector<int> eligible = eligible_sources(data, sources, target);
  if (eligible.empty())
    throw ArgumentError("flip_rate: no eligible source samples");
  return flip_fraction(model, data, eligible, target, [&](const Tensor& img) {
    return stamp_additive(img, delta);
  });
}

double attack_success_rate(const Model& model, const Dataset& data,
                           const TriggerSpec& trigger) {
  data.validate();
  trigger.validate(data.image_shape(), model.class_count());
  std::vector<int> eligible =
      eligible_sources(data, trigger.sources, trigger.target);
  if (eligible.empty())
    throw ArgumentError("attack_success_rate: no eligible source samples");
  return flip_fraction(model, data, eligible, trigger.target,
                       [&](const Tensor& img) { return stamp_image(img, trigger); });
}

void write_mutation_curves(const ScanResult& scan, std::ostream& out) {
  // flips_by_epoch[c][e] = class-c samples whose first flip came at epoch e.
  std::vector<std::vector<int>> flips(
      scan.class_count, std::vector<int>(scan.budget + 1, 0));
  for (const ScanRecord& r : scan.records)
    if (r.flip_epoch >= 1 && r.flip_epoch <= scan.budget)
      ++flips[r.label][r.flip_epoch];

  out << "epoch,class,mutation_rate\n";
  char buf[64];
  for (int c = 0; c < scan.class_count; ++c) {
    int scanned = scan.lead.scanned[c];
    int64_t cum = 0;
    for (int e = 0; e <= scan.budget; ++e) {
      if (e > 0) cum += flips[c][e];
      double rate = scanned > 0 ? static_cast<double>(cum) / scanned : 0.0;
      std::snprintf(buf, sizeof(buf), "%d,%d,%.6f\n", e, c, rate);
      out << buf;
    }
  }
}

void write_mutation_curves(const ScanResult& scan, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  write_mutation_curves(scan, f);
}

void TimingTable::add(const std::string& stage, double seconds) {
  rows.emplace_back(stage, seconds);
}

void write_timing_table(const TimingTable& t, std::ostream& out) {
  out << "stage,seconds\n";
  char buf[64];
  for (const auto& [stage, seconds] : t.rows) {
    std::snprintf(buf, sizeof(buf), ",%.3f\n", seconds);
    out << stage << buf;
  }
}

void write_timing_table(const TimingTable& t, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  write_timing_table(t, f);
}

}  // namespace istr
