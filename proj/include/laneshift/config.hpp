#pragma once

#include <filesystem>

#include "laneshift/finetune.hpp"
#include "laneshift/router.hpp"
#include "laneshift/synthgen.hpp"

namespace laneshift {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    std::vector<DistributionSpec> distributions;  // [0] is the source
    int train_per_dist = 2000;
    int test_per_dist = 500;

    DetectorConfig detector;
    TrainSpec base_train;      // 15 epochs, cosine
    TrainSpec finetune_train;  // 3 epochs, fixed
    RouterConfig router;

    std::vector<BranchConfig> branch_sweep;  // configs to fine-tune/compare
    std::vector<uint64_t> seeds{0, 1, 2};
    std::string out_dir = "runs";

    static ExperimentConfig defaults();
    void validate() const;

    /// FNV-style hash over the canonical JSON encoding; recorded in run
    /// manifests so stages can detect config drift.
    uint64_t hash() const;
    std::string to_json() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg);

/// Writes run.json (config hash, seed, tool version) into a run directory.
void write_run_manifest(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                        uint64_t seed);

extern const char* const kToolVersion;

}  // namespace laneshift
