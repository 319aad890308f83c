#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mercat/datagen.hpp"
#include "mercat/encoder.hpp"
#include "mercat/retrieval.hpp"
#include "mercat/training.hpp"

namespace mercat {

nlohmann::json training_config_to_json(const TrainingConfig& c);
/// Keys absent from `j` keep the values in `base`; unknown keys are errors.
TrainingConfig training_config_from_json(const nlohmann::json& j, TrainingConfig base = {});
nlohmann::json hybrid_config_to_json(const HybridConfig& c);
HybridConfig hybrid_config_from_json(const nlohmann::json& j, HybridConfig base = {});

/// Everything one end-to-end offline experiment needs. When `data_dir` is
/// empty the corpus is generated from `world` into the run directory.
struct ExperimentConfig {
    std::uint64_t seed = 42;
    std::filesystem::path data_dir;
    datagen::WorldSpec world;
    std::size_t sts_pairs = 2000;
    std::filesystem::path output_dir = "runs";
    bool timestamped = true;  // write into output_dir/run-<UTC time>
    EncoderConfig encoder;
    TrainingConfig training = default_training();
    HybridConfig hybrid;
    std::vector<std::size_t> ks{5, 10, 20, 50, 100};
    std::vector<std::size_t> dims{64, 32, 16, 8};
    unsigned threads = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::filesystem::path& path);
    /// TrainingConfig defaults with two epochs.
    static TrainingConfig default_training();
};

struct PipelineResult {
    std::filesystem::path run_dir;
    nlohmann::json metrics;  // also written to run_dir/metrics.json
};

/// datagen (or load) -> train MRL -> train MNR-only -> encode -> pca-fit ->
/// index -> eval-logs per arm -> eval-sts -> hybrid diagnostics -> compare.
/// Failures surface as StageError naming the stage; files written before
/// the failure are left in place.
PipelineResult run_pipeline(const ExperimentConfig& config);

}  // namespace mercat
