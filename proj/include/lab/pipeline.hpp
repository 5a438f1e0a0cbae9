#pragma once

#include "lab/config.hpp"
#include "lab/entropy.hpp"
#include "lab/shadowing.hpp"

namespace lab {

struct StageRecord {
    std::string name;
    double wall_seconds = 0.0;
    bool gate_passed = true;
    std::string summary;                 // one-line digest for the report
    std::vector<std::string> artifacts;  // file names relative to output_dir
};

struct RunManifest {
    std::string config_hash;
    std::string version;
    uint64_t seed = 0;
    double tol = 0.0;
    std::string output_dir;
    std::vector<StageRecord> stages;
    bool all_passed = true;
    bool budget_exceeded = false;
    std::string failed_stage;  // first stage whose gate failed
};

/// Per-stage RNG substream: inserting a stage must not perturb the draws of
/// the others, so each stream is derived from the stage name, not its index.
uint64_t stage_seed(uint64_t base_seed, const std::string& stage_name);

/// Built-in systems by config name: lorenz, saddle (linear diag(1,-2)),
/// rotation (3D rigid rotation about the z axis).
FlowSystem make_system(const ExperimentConfig& config);
std::vector<std::string> system_names();

RunManifest run_pipeline(const ExperimentConfig& config);

std::string manifest_to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const std::string& text);

/// Human-readable digest of a run; reads artifacts best-effort and turns
/// missing or unparseable files into warnings instead of errors.
std::string make_report(const RunManifest& manifest);

}  // namespace lab
