#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "bdg/grid.hpp"

namespace bdg {

/// Per-pixel foreground probability in [0, 1].
using PredictionMap = Grid<double>;

/// 1 where value >= threshold.
BinaryMask binarize(const PredictionMap& pred, double threshold);

struct OverlapCounts {
    std::int64_t intersection = 0;
    std::int64_t predicted = 0;
    std::int64_t truth = 0;

    std::int64_t union_size() const noexcept { return predicted + truth - intersection; }
};

OverlapCounts overlap(const BinaryMask& pred, const BinaryMask& gt);

/// 2|P & G| / (|P| + |G|); 1 when both are empty.
double dice(const BinaryMask& pred, const BinaryMask& gt);
/// |P & G| / |P | G|; 1 when both are empty.
double iou(const BinaryMask& pred, const BinaryMask& gt);

double mae(const PredictionMap& pred, const BinaryMask& gt);

/// Weighted F-measure (beta^2 = 1): errors are smoothed by a 7x7 Gaussian
/// (sigma 5) seeded from the nearest foreground pixel, and background
/// errors are amplified with distance from the object. Returns 0 for an
/// empty ground truth.
double f_beta_weighted(const PredictionMap& pred, const BinaryMask& gt);

/// Structure measure with alpha = 0.5 (object- and region-aware terms).
double s_measure(const PredictionMap& pred, const BinaryMask& gt);

/// Maximum enhanced-alignment measure over thresholds k/255, k = 0..255.
double e_measure_max(const PredictionMap& pred, const BinaryMask& gt);

/// Enhanced-alignment measure of a binary prediction.
double e_measure(const BinaryMask& pred, const BinaryMask& gt);

struct MetricRow {
    std::string image_id;
    double dice = 0.0;
    double iou = 0.0;
    double fbw = 0.0;
    double smeasure = 0.0;
    double emeasure = 0.0;
    double mae = 0.0;
    /// Ground truth was empty; fbw holds the convention value 0.
    bool degenerate = false;
};

struct MetricsReport {
    std::vector<MetricRow> rows;
    MetricRow mean;

    std::size_t count() const noexcept { return rows.size(); }
    /// Header, one row per image, then a "mean" row.
    void write_csv(std::ostream& os) const;
    /// Aligned summary table: mean Dice, mean IoU, Fw, S, E max, MAE.
    std::string table() const;
};

inline constexpr const char* kMetricsCsvHeader = "image_id,dice,iou,fbw,smeasure,emeasure,mae";

/// All six metrics for one image. Dice and IoU use `threshold`.
MetricRow evaluate_image(const std::string& id, const PredictionMap& pred, const BinaryMask& gt,
                         double threshold = 0.5);

struct EvalPair {
    std::string image_id;
    PredictionMap pred;
    BinaryMask gt;
};

/// Per-image rows (in input order) and their unweighted means. Predictions
/// of a different size are bilinearly resampled to the ground truth first.
MetricsReport evaluate_dataset(const std::vector<EvalPair>& pairs, double threshold = 0.5);

/// Bilinear resampling with half-pixel centres.
PredictionMap resize_prediction(const PredictionMap& pred, int height, int width);

}  // namespace bdg
