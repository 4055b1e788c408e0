#pragma once

#include <cstdint>
#include <string>

#include "istr/dms.hpp"
#include "istr/model.hpp"
#include "istr/poison.hpp"
#include "istr/repair.hpp"
#include "istr/steps.hpp"

namespace istr {

// Where the samples come from: a named synthetic generator, a pair of IDX
// files, or directories of image files (one subdirectory per class).
struct DatasetSpec {
  std::string name;  // synthetic preset; empty when loading from files
  int train_count = 10000;
  int test_count = 2000;
  std::string train_images, train_labels;  // IDX paths
  std::string test_images, test_labels;
  std::string train_dir, test_dir;         // image directory roots
};

// Everything one run needs, with every knob carrying its default. Parsing is
// strict: an unknown key anywhere is a ConfigError naming that key.
struct RunConfig {
  DatasetSpec dataset;
  std::string arch = "3Conv+2FC";
  uint64_t seed = 1;

  std::string attack_preset = "badnets";  // "none" = natural-backdoor mode
  AttackParams attack;

  TrainConfig train;

  ScanParams detect;
  ScreenParams screen;
  bool detect_use_dms = true;  // scan under per-class differential envelopes

  DmsParams dms;
  // The masked scan gets its own (longer) budget: the envelope throttles
  // every low-priority pixel, so in-band paths need more epochs than the
  // unconstrained scan while everything else stays frozen regardless.
  int dms_budget = 40;
  InvertParams invert;

  float repair_mix = 0.2f;
  UnlearnParams repair;  // lr defaults to a tenth of train.lr

  bool full_dms = false;  // report envelopes for all classes, not just flagged
};

RunConfig parse_config(const std::string& path);
RunConfig parse_config_text(const std::string& json_text);

// Overrides the run seed and propagates it into every stage's seed, the same
// way parsing does for the config's own seed.
void apply_seed(RunConfig& cfg, uint64_t seed);

// Canonical full echo of the effective configuration. Two parses of the
// same file echo byte-identically.
std::string config_echo(const RunConfig& cfg);

}  // namespace istr
