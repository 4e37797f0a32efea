#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "bdg/data.hpp"
#include "bdg/losses.hpp"
#include "bdg/network.hpp"

namespace bdg {

struct OptimizerConfig {
    std::string kind = "adam";
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int batch_size = 16;
    int iterations = 1000;
};

struct RunConfig {
    NetworkConfig network;
    LossConfig loss;
    OptimizerConfig optimizer;
    std::uint64_t seed = 0;
    bool augment = true;
    int checkpoint_every = 0;  // 0: only at the end

    /// Layout manifest of the datasets.
    std::filesystem::path manifest;
    /// Optional split manifest; when empty, every record is used for training.
    std::filesystem::path split;
    std::filesystem::path output_dir = "runs";
    bool normalized_bdm = true;
    BoundaryMode boundary = BoundaryMode::inner;
    Normalization norm;

    /// Throws std::invalid_argument on out-of-range values.
    void validate() const;
    PreprocessOptions preprocess_options() const;
};

/// One configurable key: its section in the file, a setter from text and a
/// getter to text. Every key doubles as a `--<name>` command-line flag.
struct ConfigKey {
    std::string section;
    std::string name;
    std::string help;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

const std::vector<ConfigKey>& config_keys();

/// Sectioned key = value text; unknown keys are rejected.
RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(const std::string& text);
void apply_setting(RunConfig& cfg, const std::string& name, const std::string& value);

/// Every key with its current value, grouped by section.
std::string to_text(const RunConfig& cfg);

}  // namespace bdg
