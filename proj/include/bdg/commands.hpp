#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "bdg/config.hpp"
#include "bdg/metrics.hpp"
#include "bdg/trainer.hpp"

namespace bdg {

struct GenBdmOptions {
    std::filesystem::path masks;
    std::filesystem::path out;
    std::vector<double> sigmas{5.0};
    bool normalized = true;
    BoundaryMode boundary = BoundaryMode::inner;
};

/// For each mask writes <stem>.png (8-bit preview) and <stem>.bdm (raw
/// float grid). With several sigmas each gets its own sigma-<value>
/// subdirectory. Returns the number of files written.
std::size_t cmd_gen_bdm(const GenBdmOptions& opt);

/// Samples named by the layout manifest, restricted to the requested side of
/// the split manifest when one is given, preprocessed at the config size.
std::vector<PreparedSample> load_samples(const RunConfig& cfg, bool test_side);

TrainResult cmd_train(const RunConfig& cfg, std::ostream* progress = nullptr);

struct EvalOptions {
    std::filesystem::path checkpoint;
    /// Layout manifest; the checkpoint's own manifest when empty.
    std::filesystem::path manifest;
    /// Evaluate only the test ids of this split manifest.
    std::filesystem::path split;
    std::filesystem::path out = "eval";
    double threshold = 0.5;
};

struct EvalResult {
    std::map<std::string, MetricsReport> reports;
    FlopBreakdown flops;
};

/// Predicts at the configured resolution, resamples to each mask's size and
/// writes metrics-<dataset>.csv plus metrics-<dataset>.txt per dataset.
/// Prints the tables and the FLOP count of the configuration to `os`.
EvalResult cmd_eval(const EvalOptions& opt, std::ostream& os);

struct InferOptions {
    std::filesystem::path checkpoint;
    std::filesystem::path images;
    std::filesystem::path out;
    double threshold = 0.5;
};

/// Writes <stem>_mask.png and <stem>_bdm.png at each input's original size.
/// Returns the number of images processed.
std::size_t cmd_infer(const InferOptions& opt);

/// Command-line entry point. Exit codes: 0 success, 1 usage, 2 data,
/// 3 numerical failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumerical = 3;

}  // namespace bdg
