#pragma once

#include <string>
#include <vector>

#include "istr/config.hpp"

namespace istr {

struct PipelineResult {
  std::string out_dir;
  std::vector<std::string> stages_run;      // stages that did work
  std::vector<std::string> stages_skipped;  // satisfied by existing artifacts
};

// Executes one stage (train | poison | detect | dms | invert | repair | eval |
// report) or the whole chain ("run") inside out_dir. The directory is
// append-only: existing artifacts are never rewritten, a stage whose outputs
// already exist is skipped, and a stage whose prerequisites are missing
// throws PrerequisiteError. Any error raised inside a stage is re-thrown
// with the stage name prefixed, keeping its kind.
//
// Layout of a run directory:
//   config.echo.json      effective configuration (must match on resume)
//   checkpoints/          shadow.ckpt, model.ckpt, model-repaired.ckpt
//   masks/                per-class differential envelopes (.tsr + view)
//   triggers/             true triggers and recovered reverse triggers
//   curves/               mutation-rate curves (CSV)
//   raw/                  machine dumps every report is rebuilt from
//   reports/              human-facing JSON reports
//   timings.json          wall-clock per stage (informational only)
PipelineResult pipeline_run(const RunConfig& cfg, const std::string& out_dir,
                            const std::string& stage);

const std::vector<std::string>& pipeline_stage_names();  // execution order

}  // namespace istr
