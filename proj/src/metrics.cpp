#include "bdg/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "bdg/bdm.hpp"
#include "bdg/kernels.hpp"

namespace bdg {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

void require_same(const PredictionMap& pred, const BinaryMask& gt, const char* what) {
    if (pred.height() != gt.height() || pred.width() != gt.width()) {
        throw std::invalid_argument(std::string(what) + ": prediction " + std::to_string(pred.height()) + "x" +
                                    std::to_string(pred.width()) + " vs ground truth " +
                                    std::to_string(gt.height()) + "x" + std::to_string(gt.width()));
    }
}

/// Normalised 7x7 Gaussian, sigma 5, as one separable factor.
std::array<double, 7> gaussian_factor() {
    std::array<double, 7> g{};
    double sum = 0.0;
    for (int i = 0; i < 7; ++i) {
        const double d = i - 3;
        g[i] = std::exp(-d * d / (2.0 * 25.0));
        sum += g[i];
    }
    for (auto& v : g) v /= sum;
    return g;
}

/// Correlation with the 7x7 Gaussian, zero outside the image.
Grid<double> gaussian_smooth(const Grid<double>& src) {
    static const std::array<double, 7> g = gaussian_factor();
    const int h = src.height(), w = src.width();
    Grid<double> tmp(h, w, 0.0), out(h, w, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int d = -3; d <= 3; ++d) {
                const int xx = x + d;
                if (xx >= 0 && xx < w) acc += g[d + 3] * src(y, xx);
            }
            tmp(y, x) = acc;
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int d = -3; d <= 3; ++d) {
                const int yy = y + d;
                if (yy >= 0 && yy < h) acc += g[d + 3] * tmp(yy, x);
            }
            out(y, x) = acc;
        }
    }
    return out;
}

/// SSIM-style similarity of a rectangular region [y0, y1) x [x0, x1).
double region_similarity(const PredictionMap& pred, const BinaryMask& gt, int y0, int y1, int x0, int x1) {
    const double n = static_cast<double>(y1 - y0) * (x1 - x0);
    double sx = 0.0, sy = 0.0;
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            sx += pred(y, x);
            sy += gt(y, x) ? 1.0 : 0.0;
        }
    }
    const double mx = sx / n, my = sy / n;
    double vx = 0.0, vy = 0.0, cxy = 0.0;
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            const double dx = pred(y, x) - mx;
            const double dy = (gt(y, x) ? 1.0 : 0.0) - my;
            vx += dx * dx;
            vy += dy * dy;
            cxy += dx * dy;
        }
    }
    const double denom = n - 1.0 + kEps;
    vx /= denom;
    vy /= denom;
    cxy /= denom;
    const double alpha = 4.0 * mx * my * cxy;
    const double beta = (mx * mx + my * my) * (vx + vy);
    if (alpha != 0.0) return alpha / (beta + kEps);
    return beta == 0.0 ? 1.0 : 0.0;
}

/// Mean-and-spread similarity of one side of the object.
double object_similarity(const std::vector<double>& values) {
    if (values.empty()) return 0.0;
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mean = sum / static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    const double sd = values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
    return 2.0 * mean / (mean * mean + 1.0 + sd + kEps);
}

/// (1 + phi)^2 / 4 for one (prediction, truth) cell given the global means.
double enhanced(double fm, double gt, double mu_fm, double mu_gt) {
    const double a = fm - mu_fm;
    const double b = gt - mu_gt;
    const double phi = 2.0 * a * b / (a * a + b * b + kEps);
    return (phi + 1.0) * (phi + 1.0) / 4.0;
}

/// E-measure of a binary prediction from its confusion counts.
double e_measure_counts(double tp, double fp, double fg, double n) {
    const double on = tp + fp;
    if (fg == 0.0) return (n - on) / n;
    if (fg == n) return on / n;
    const double mu_fm = on / n, mu_gt = fg / n;
    const double fn = fg - tp, tn = n - fg - fp;
    const double total = tp * enhanced(1.0, 1.0, mu_fm, mu_gt) + fp * enhanced(1.0, 0.0, mu_fm, mu_gt) +
                         fn * enhanced(0.0, 1.0, mu_fm, mu_gt) + tn * enhanced(0.0, 0.0, mu_fm, mu_gt);
    return total / n;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

BinaryMask binarize(const PredictionMap& pred, double threshold) {
    BinaryMask out(pred.height(), pred.width());
    for (std::size_t i = 0; i < pred.size(); ++i) out.set(i, pred[i] >= threshold);
    return out;
}

OverlapCounts overlap(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.height() != gt.height() || pred.width() != gt.width()) {
        throw std::invalid_argument("overlap: mask shapes differ");
    }
    OverlapCounts c;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const bool p = pred[i], g = gt[i];
        c.intersection += p && g;
        c.predicted += p;
        c.truth += g;
    }
    return c;
}

double dice(const BinaryMask& pred, const BinaryMask& gt) {
    const OverlapCounts c = overlap(pred, gt);
    const std::int64_t denom = c.predicted + c.truth;
    return denom == 0 ? 1.0 : 2.0 * static_cast<double>(c.intersection) / static_cast<double>(denom);
}

double iou(const BinaryMask& pred, const BinaryMask& gt) {
    const OverlapCounts c = overlap(pred, gt);
    const std::int64_t u = c.union_size();
    return u == 0 ? 1.0 : static_cast<double>(c.intersection) / static_cast<double>(u);
}

double mae(const PredictionMap& pred, const BinaryMask& gt) {
    require_same(pred, gt, "mae");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - (gt[i] ? 1.0 : 0.0));
    return acc / static_cast<double>(pred.size());
}

double f_beta_weighted(const PredictionMap& pred, const BinaryMask& gt) {
    require_same(pred, gt, "f_beta_weighted");
    const int h = gt.height(), w = gt.width();
    const std::size_t fg = gt.count();
    if (fg == 0) return 0.0;

    Grid<double> err(h, w);
    for (std::size_t i = 0; i < err.size(); ++i) err[i] = std::abs(pred[i] - (gt[i] ? 1.0 : 0.0));

    // Background pixels take the error of their nearest foreground pixel so
    // the smoothing does not leak across the object's edge.
    const FeatureTransform ft = feature_transform(gt);
    Grid<double> seeded = err;
    for (std::size_t i = 0; i < err.size(); ++i) {
        if (!gt[i]) seeded[i] = err[static_cast<std::size_t>(ft.nearest[i])];
    }
    const Grid<double> smoothed = gaussian_smooth(seeded);

    double tp = static_cast<double>(fg), fp = 0.0, fg_err = 0.0;
    for (std::size_t i = 0; i < err.size(); ++i) {
        if (gt[i]) {
            const double e = std::min(err[i], smoothed[i]);
            fg_err += e;
        } else {
            const double dist = std::sqrt(static_cast<double>(ft.squared[i]));
            fp += err[i] * (2.0 - std::exp(std::log(0.5) / 5.0 * dist));
        }
    }
    tp -= fg_err;
    const double recall = 1.0 - fg_err / static_cast<double>(fg);
    const double precision = tp / (kEps + tp + fp);
    return 2.0 * recall * precision / (kEps + recall + precision);
}

double s_measure(const PredictionMap& pred, const BinaryMask& gt) {
    require_same(pred, gt, "s_measure");
    const int h = gt.height(), w = gt.width();
    const double n = static_cast<double>(gt.size());
    const double fg = static_cast<double>(gt.count());
    double pred_sum = 0.0;
    for (double v : pred.values()) pred_sum += v;
    if (fg == 0.0) return 1.0 - pred_sum / n;
    if (fg == n) return pred_sum / n;

    std::vector<double> inside, outside;
    inside.reserve(static_cast<std::size_t>(fg));
    outside.reserve(gt.size() - static_cast<std::size_t>(fg));
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt[i]) {
            inside.push_back(pred[i]);
        } else {
            outside.push_back(1.0 - pred[i]);
        }
    }
    const double u = fg / n;
    const double object = u * object_similarity(inside) + (1.0 - u) * object_similarity(outside);

    // Centroid in 1-based coordinates, rounded half away from zero.
    double sx = 0.0, sy = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (gt(y, x)) {
                sx += x + 1;
                sy += y + 1;
            }
        }
    }
    const int cx = static_cast<int>(std::round(sx / fg));
    const int cy = static_cast<int>(std::round(sy / fg));
    const double area = n;
    const double w1 = static_cast<double>(cx) * cy / area;
    const double w2 = static_cast<double>(w - cx) * cy / area;
    const double w3 = static_cast<double>(cx) * (h - cy) / area;
    const double w4 = 1.0 - w1 - w2 - w3;
    const std::array<std::array<int, 4>, 4> quads{{
        {0, cy, 0, cx},
        {0, cy, cx, w},
        {cy, h, 0, cx},
        {cy, h, cx, w},
    }};
    const std::array<double, 4> weights{w1, w2, w3, w4};
    double region = 0.0;
    for (int q = 0; q < 4; ++q) {
        const auto& r = quads[q];
        if (r[1] <= r[0] || r[3] <= r[2]) continue;
        region += weights[q] * region_similarity(pred, gt, r[0], r[1], r[2], r[3]);
    }
    const double score = 0.5 * object + 0.5 * region;
    return std::max(score, 0.0);
}

double e_measure(const BinaryMask& pred, const BinaryMask& gt) {
    const OverlapCounts c = overlap(pred, gt);
    return e_measure_counts(static_cast<double>(c.intersection),
                            static_cast<double>(c.predicted - c.intersection), static_cast<double>(c.truth),
                            static_cast<double>(gt.size()));
}

double e_measure_max(const PredictionMap& pred, const BinaryMask& gt) {
    require_same(pred, gt, "e_measure_max");
    // Bin each pixel by the highest threshold k/255 it reaches, then sweep
    // thresholds from the top accumulating true and false positives.
    std::array<double, 256> tp_hist{}, fp_hist{};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = pred[i];
        if (!(p >= 0.0)) continue;
        int k = std::min(255, static_cast<int>(p * 255.0));
        while (k < 255 && p >= static_cast<double>(k + 1) / 255.0) ++k;
        while (k > 0 && p < static_cast<double>(k) / 255.0) --k;
        (gt[i] ? tp_hist : fp_hist)[k] += 1.0;
    }
    const double n = static_cast<double>(gt.size());
    const double fg = static_cast<double>(gt.count());
    double tp = 0.0, fp = 0.0, best = -1.0;
    for (int k = 255; k >= 0; --k) {
        tp += tp_hist[k];
        fp += fp_hist[k];
        best = std::max(best, e_measure_counts(tp, fp, fg, n));
    }
    return best;
}

MetricRow evaluate_image(const std::string& id, const PredictionMap& pred, const BinaryMask& gt, double threshold) {
    require_same(pred, gt, "evaluate_image");
    MetricRow row;
    row.image_id = id;
    const BinaryMask bin = binarize(pred, threshold);
    row.dice = dice(bin, gt);
    row.iou = iou(bin, gt);
    row.fbw = f_beta_weighted(pred, gt);
    row.smeasure = s_measure(pred, gt);
    row.emeasure = e_measure_max(pred, gt);
    row.mae = mae(pred, gt);
    row.degenerate = gt.count() == 0;
    return row;
}

PredictionMap resize_prediction(const PredictionMap& pred, int height, int width) {
    if (pred.height() == height && pred.width() == width) return pred;
    Tensor<double> t(Shape{1, 1, pred.height(), pred.width()}, pred.values());
    const Tensor<double> r = kernels::resize_bilinear_forward(t, height, width);
    PredictionMap out(height, width);
    std::copy(r.data(), r.data() + r.numel(), out.data());
    return out;
}

MetricsReport evaluate_dataset(const std::vector<EvalPair>& pairs, double threshold) {
    MetricsReport report;
    report.rows.resize(pairs.size());
    const int count = static_cast<int>(pairs.size());
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < count; ++i) {
        const EvalPair& p = pairs[i];
        const PredictionMap pred = resize_prediction(p.pred, p.gt.height(), p.gt.width());
        report.rows[i] = evaluate_image(p.image_id, pred, p.gt, threshold);
    }
    report.mean.image_id = "mean";
    if (!report.rows.empty()) {
        for (const auto& r : report.rows) {
            report.mean.dice += r.dice;
            report.mean.iou += r.iou;
            report.mean.fbw += r.fbw;
            report.mean.smeasure += r.smeasure;
            report.mean.emeasure += r.emeasure;
            report.mean.mae += r.mae;
        }
        const double n = static_cast<double>(report.rows.size());
        report.mean.dice /= n;
        report.mean.iou /= n;
        report.mean.fbw /= n;
        report.mean.smeasure /= n;
        report.mean.emeasure /= n;
        report.mean.mae /= n;
    }
    return report;
}

void MetricsReport::write_csv(std::ostream& os) const {
    os << kMetricsCsvHeader << '\n';
    char buf[256];
    auto line = [&](const MetricRow& r) {
        std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.dice, r.iou, r.fbw,
                      r.smeasure, r.emeasure, r.mae);
        os << r.image_id << buf;
    };
    for (const auto& r : rows) line(r);
    line(mean);
}

std::string MetricsReport::table() const {
    const std::array<std::string, 6> names{"mDice", "mIoU", "F_w", "S_alpha", "E_max", "MAE"};
    const std::array<double, 6> values{mean.dice, mean.iou, mean.fbw, mean.smeasure, mean.emeasure, mean.mae};
    std::ostringstream os;
    for (const auto& n : names) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%10s", n.c_str());
        os << buf;
    }
    os << "   (n=" << rows.size() << ")\n";
    for (double v : values) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%10s", fmt(v).c_str());
        os << buf;
    }
    os << '\n';
    return os.str();
}

}  // namespace bdg
