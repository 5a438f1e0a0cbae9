#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace lab {

/// One pipeline stage: a registered name plus a flat parameter table.
struct StageConfig {
    std::string name;
    std::map<std::string, double> num;
    std::map<std::string, std::string> str;
};

struct ExperimentConfig {
    std::string system = "lorenz";
    std::map<std::string, double> system_params;
    uint64_t seed = 0;
    std::string output_dir = "out";
    double time_budget_s = 1800.0;
    int vertex_budget = 1000000;
    int64_t sample_budget = 1000000000;
    double tol = 1e-10;
    int threads = 1;
    std::vector<StageConfig> pipeline;
};

/// Registered stage names; anything else is rejected at parse time.
const std::vector<std::string>& known_stages();

/// Parses the TOML-style subset used for experiment configs:
/// top-level `key = value`, `[system.params]` tables and `[[stage]]`
/// array-of-tables with string/number/bool values.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Canonical serialization; parse(dump(c)) == c byte-for-byte re-dumped.
std::string dump_config(const ExperimentConfig& config);

/// FNV-1a hash of the canonical dump, hex string.
std::string config_hash(const ExperimentConfig& config);

}  // namespace lab
