#pragma once

#include <cstdint>
#include <limits>

#include "bdg/grid.hpp"

namespace bdg {

/// Which pixels form "the boundary" of a mask.
enum class BoundaryMode {
    /// Foreground pixels with at least one in-image 4-neighbour in the background.
    inner,
    /// Inner boundary plus background pixels with a 4-neighbour in the foreground.
    symmetric,
};

/// Squared distances and nearest-site indices of an exact Euclidean
/// distance transform. `nearest` holds the row-major index of the site each
/// pixel is closest to; ties resolve to the site with the smallest (row, col).
struct FeatureTransform {
    static constexpr std::int64_t kNoSite = std::numeric_limits<std::int64_t>::max();

    Grid<std::int64_t> squared;
    Grid<std::int32_t> nearest;
    bool has_sites = false;
};

/// Euclidean distance from each pixel to the nearest boundary pixel.
struct DistanceField {
    Grid<double> values;
    /// False when the boundary set was empty; `values` is then +inf everywhere.
    bool has_boundary = false;
};

struct BoundaryDistributionMap {
    Grid<double> values;
    double sigma = 0.0;
    bool normalized = true;
};

BinaryMask extract_boundary(const BinaryMask& mask, BoundaryMode mode = BoundaryMode::inner);

/// Exact two-pass lower-envelope transform over integer squared distances.
/// Rows are processed independently, then columns; both passes are OpenMP
/// parallel and the result does not depend on the thread count.
FeatureTransform feature_transform(const BinaryMask& sites);

DistanceField distance_transform(const BinaryMask& boundary);

/// Gaussian of the distance to the boundary:
///   normalized:  exp(-d^2 / (2 sigma^2))               (peak 1)
///   otherwise:   exp(-d^2 / (2 sigma^2)) / (sqrt(2 pi) sigma)
/// An empty boundary yields an all-zero map. Throws std::invalid_argument
/// for sigma <= 0.
BoundaryDistributionMap ideal_bdm(const BinaryMask& mask, double sigma, bool normalized = true,
                                  BoundaryMode mode = BoundaryMode::inner);

/// Maps a distance field through the Gaussian profile above.
BoundaryDistributionMap bdm_from_distance(const DistanceField& field, double sigma, bool normalized);

}  // namespace bdg
