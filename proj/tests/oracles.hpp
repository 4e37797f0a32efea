#pragma once

// Slow, direct transcriptions used as references. Nothing here shares code
// with the library beyond the container types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "bdg/grid.hpp"

namespace bdg::oracle {

inline constexpr double kEps = std::numeric_limits<double>::epsilon();

/// Nearest site by exhaustive search; ties go to the first site in row-major
/// order. Returns squared distances and site indices (-1 without sites).
struct Nearest {
    Grid<std::int64_t> squared;
    Grid<std::int64_t> index;
};

inline Nearest nearest_site(const BinaryMask& sites) {
    const int h = sites.height(), w = sites.width();
    Nearest out{Grid<std::int64_t>(h, w, std::numeric_limits<std::int64_t>::max()), Grid<std::int64_t>(h, w, -1)};
    std::vector<std::pair<int, int>> list;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (sites(y, x)) list.emplace_back(y, x);
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (const auto& [sy, sx] : list) {
                const std::int64_t d = std::int64_t(y - sy) * (y - sy) + std::int64_t(x - sx) * (x - sx);
                if (d < out.squared(y, x)) {
                    out.squared(y, x) = d;
                    out.index(y, x) = std::int64_t(sy) * w + sx;
                }
            }
        }
    }
    return out;
}

inline Grid<double> distance(const BinaryMask& sites) {
    const Nearest n = nearest_site(sites);
    Grid<double> d(sites.height(), sites.width(), std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (n.index[i] >= 0) d[i] = std::sqrt(static_cast<double>(n.squared[i]));
    }
    return d;
}

/// Foreground pixels with a 4-neighbour inside the image that is background.
inline BinaryMask inner_boundary(const BinaryMask& m) {
    BinaryMask b(m.height(), m.width());
    const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
    for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) {
            if (!m(y, x)) continue;
            for (int k = 0; k < 4; ++k) {
                const int yy = y + dy[k], xx = x + dx[k];
                if (yy >= 0 && yy < m.height() && xx >= 0 && xx < m.width() && !m(yy, xx)) b.set(y, x, true);
            }
        }
    }
    return b;
}

inline double gt_value(const BinaryMask& gt, int y, int x) { return gt(y, x) ? 1.0 : 0.0; }

/// Weighted F-measure (beta^2 = 1): errors of background pixels are replaced
/// by those of their nearest foreground pixel, smoothed with a 7x7 Gaussian
/// (sigma 5, zero outside), foreground errors take the smaller of raw and
/// smoothed, background errors are scaled by 2 - 0.5^(dist / 5).
inline double weighted_f(const Grid<double>& pred, const BinaryMask& gt) {
    const int h = gt.height(), w = gt.width();
    double fg = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) fg += gt[i] ? 1.0 : 0.0;
    if (fg == 0.0) return 0.0;
    const Nearest near = nearest_site(gt);

    Grid<double> e(h, w), et(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) e(y, x) = std::fabs(pred(y, x) - gt_value(gt, y, x));
    }
    for (std::size_t i = 0; i < e.size(); ++i) et[i] = gt[i] ? e[i] : e[static_cast<std::size_t>(near.index[i])];

    double kernel[7][7];
    double ksum = 0.0;
    for (int a = 0; a < 7; ++a) {
        for (int b = 0; b < 7; ++b) {
            kernel[a][b] = std::exp(-((a - 3.0) * (a - 3.0) + (b - 3.0) * (b - 3.0)) / 50.0);
            ksum += kernel[a][b];
        }
    }
    Grid<double> ea(h, w, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int a = 0; a < 7; ++a) {
                for (int b = 0; b < 7; ++b) {
                    const int yy = y + a - 3, xx = x + b - 3;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    acc += kernel[a][b] / ksum * et(yy, xx);
                }
            }
            ea(y, x) = acc;
        }
    }

    double ew_fg = 0.0, ew_bg = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) {
        if (gt[i]) {
            ew_fg += (ea[i] < e[i]) ? ea[i] : e[i];
        } else {
            const double dst = std::sqrt(static_cast<double>(near.squared[i]));
            ew_bg += e[i] * (2.0 - std::exp(std::log(1.0 - 0.5) / 5.0 * dst));
        }
    }
    const double tpw = fg - ew_fg;
    const double r = 1.0 - ew_fg / fg;
    const double p = tpw / (kEps + tpw + ew_bg);
    return 2.0 * r * p / (kEps + r + p);
}

inline double ssim_region(const Grid<double>& pred, const BinaryMask& gt, int y0, int y1, int x0, int x1) {
    const double n = double(y1 - y0) * double(x1 - x0);
    double mx = 0.0, my = 0.0;
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            mx += pred(y, x);
            my += gt_value(gt, y, x);
        }
    }
    mx /= n;
    my /= n;
    double sx = 0.0, sy = 0.0, sxy = 0.0;
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            sx += (pred(y, x) - mx) * (pred(y, x) - mx);
            sy += (gt_value(gt, y, x) - my) * (gt_value(gt, y, x) - my);
            sxy += (pred(y, x) - mx) * (gt_value(gt, y, x) - my);
        }
    }
    sx /= (n - 1 + kEps);
    sy /= (n - 1 + kEps);
    sxy /= (n - 1 + kEps);
    const double alpha = 4 * mx * my * sxy;
    const double beta = (mx * mx + my * my) * (sx + sy);
    if (alpha != 0) return alpha / (beta + kEps);
    if (beta == 0) return 1.0;
    return 0.0;
}

inline double object_score(const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= double(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(ss / double(v.size() - 1)) : 0.0;
    return 2.0 * mean / (mean * mean + 1.0 + sd + kEps);
}

/// Structure measure with alpha = 0.5 and the usual degenerate cases.
/// Quadrants with no pixels contribute nothing.
inline double structure(const Grid<double>& pred, const BinaryMask& gt) {
    const int h = gt.height(), w = gt.width();
    const double n = double(h) * w;
    double y = 0.0, mp = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        y += gt[i] ? 1.0 : 0.0;
        mp += pred[i];
    }
    y /= n;
    mp /= n;
    if (y == 0) return 1.0 - mp;
    if (y == 1) return mp;

    std::vector<double> fg, bg;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt[i]) {
            fg.push_back(pred[i]);
        } else {
            bg.push_back(1.0 - pred[i]);
        }
    }
    const double so = y * object_score(fg) + (1 - y) * object_score(bg);

    double total = 0.0, ix = 0.0, iy = 0.0;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            if (!gt(r, c)) continue;
            total += 1;
            ix += c + 1;
            iy += r + 1;
        }
    }
    const int cx = int(std::round(ix / total));
    const int cy = int(std::round(iy / total));
    const double w1 = double(cx) * cy / n;
    const double w2 = double(w - cx) * cy / n;
    const double w3 = double(cx) * (h - cy) / n;
    const double w4 = 1.0 - w1 - w2 - w3;
    double sr = 0.0;
    if (cy > 0 && cx > 0) sr += w1 * ssim_region(pred, gt, 0, cy, 0, cx);
    if (cy > 0 && w > cx) sr += w2 * ssim_region(pred, gt, 0, cy, cx, w);
    if (h > cy && cx > 0) sr += w3 * ssim_region(pred, gt, cy, h, 0, cx);
    if (h > cy && w > cx) sr += w4 * ssim_region(pred, gt, cy, h, cx, w);
    const double q = 0.5 * so + 0.5 * sr;
    return q < 0 ? 0.0 : q;
}

/// Enhanced-alignment score of one binary prediction, per pixel.
inline double enhanced_alignment(const BinaryMask& fm, const BinaryMask& gt) {
    const double n = double(gt.size());
    double mf = 0.0, mg = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        mf += fm[i] ? 1.0 : 0.0;
        mg += gt[i] ? 1.0 : 0.0;
    }
    double acc = 0.0;
    if (mg == 0.0) {
        for (std::size_t i = 0; i < gt.size(); ++i) acc += 1.0 - (fm[i] ? 1.0 : 0.0);
        return acc / n;
    }
    if (mg == n) {
        for (std::size_t i = 0; i < gt.size(); ++i) acc += fm[i] ? 1.0 : 0.0;
        return acc / n;
    }
    mf /= n;
    mg /= n;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const double a = (fm[i] ? 1.0 : 0.0) - mf;
        const double b = (gt[i] ? 1.0 : 0.0) - mg;
        const double align = 2.0 * a * b / (a * a + b * b + kEps);
        acc += (align + 1.0) * (align + 1.0) / 4.0;
    }
    return acc / n;
}

/// Best enhanced alignment over thresholds k/255, k = 0..255 (pred >= t).
inline double enhanced_max(const Grid<double>& pred, const BinaryMask& gt) {
    double best = -1.0;
    for (int k = 0; k <= 255; ++k) {
        const double t = k / 255.0;
        BinaryMask fm(gt.height(), gt.width());
        for (std::size_t i = 0; i < gt.size(); ++i) fm.set(i, pred[i] >= t);
        best = std::max(best, enhanced_alignment(fm, gt));
    }
    return best;
}

}  // namespace bdg::oracle
