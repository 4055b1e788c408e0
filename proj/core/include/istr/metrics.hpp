#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "istr/dataset.hpp"
#include "istr/model.hpp"
#include "istr/poison.hpp"
#include "istr/steps.hpp"
#include "istr/tensor.hpp"

namespace istr {

// What the attacker actually implanted, for scoring a detection.
struct DetectionTruth {
  int class_count = 0;
  std::vector<int> classes;                  // true source classes
  std::vector<std::pair<int, int>> pairs;    // true (source, target) pairs
};

struct DetectionScore {
  double accuracy = 0.0;    // correctly judged classes / all classes
  double tpr_class = 0.0;   // flagged true sources / true sources
  double tpr_pair = 0.0;    // flagged true pairs / true pairs
  int false_flagged = 0;    // clean classes that got flagged anyway
};

// Both TPR granularities are computed; empty truth scores as a perfect 1.0
// (nothing to find).
DetectionScore score_detection(const ScreenResult& screen,
                               const DetectionTruth& truth);

// Mean absolute per-pixel difference between two same-shaped images.
double apd(const Tensor& a, const Tensor& b);

// Fraction of eligible samples (label in sources, or any label != target
// when sources is empty) that the model sends to `target` once `delta` is
// stamped additively. An empty eligible set is an ArgumentError.
double flip_rate(const Model& model, const Dataset& data, const Tensor& delta,
                 const std::vector<int>& sources, int target);

// Same measure under a blended trigger spec (the attacker's own stamp).
double attack_success_rate(const Model& model, const Dataset& data,
                           const TriggerSpec& trigger);

// Cumulative mutation-rate curves: one CSV row per (epoch, class) with the
// fraction of scanned class samples already flipped by that epoch. Rates are
// non-decreasing in the epoch by construction.
void write_mutation_curves(const ScanResult& scan, std::ostream& out);
void write_mutation_curves(const ScanResult& scan, const std::string& path);

// Stage timings; informational only, never asserted on.
struct TimingTable {
  std::vector<std::pair<std::string, double>> rows;  // (stage, seconds)
  void add(const std::string& stage, double seconds);
};
void write_timing_table(const TimingTable& t, std::ostream& out);
void write_timing_table(const TimingTable& t, const std::string& path);

}  // namespace istr
