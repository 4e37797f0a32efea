#pragma once

#include <filesystem>
#include <memory>

#include "bdg/config.hpp"
#include "bdg/network.hpp"

namespace bdg {

/// A checkpoint is a directory holding
///
///   manifest.txt  the run configuration, then a [tensors] section with one
///                 "name c0,c1,c2,c3 offset" line per persisted tensor
///   weights.bin   every tensor back to back as little-endian float32
///
/// Offsets count floats from the start of weights.bin.
inline constexpr const char* kManifestFile = "manifest.txt";
inline constexpr const char* kWeightsFile = "weights.bin";

void save_checkpoint(const std::filesystem::path& dir, const RunConfig& cfg, BDGNet<float>& net);

struct LoadedModel {
    RunConfig config;
    std::unique_ptr<BDGNet<float>> net;
};

/// Rebuilds the network from the stored configuration and restores every
/// tensor. Throws DataError on a missing file, unknown or missing tensor,
/// shape mismatch or truncated blob.
LoadedModel load_checkpoint(const std::filesystem::path& dir);

}  // namespace bdg
