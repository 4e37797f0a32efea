#include "bdg/bdm.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace bdg {

namespace {

constexpr std::int64_t kInf = FeatureTransform::kNoSite;

// Exact rational p / q with q > 0. Used for parabola intersections so the
// envelope never depends on floating-point rounding.
struct Rational {
    std::int64_t num;
    std::int64_t den;
    bool neg_inf = false;
    bool pos_inf = false;
};

bool less_equal(const Rational& a, const Rational& b) {
    if (a.neg_inf || b.pos_inf) return true;
    if (a.pos_inf || b.neg_inf) return false;
    return a.num * b.den <= b.num * a.den;
}

bool less_than_int(const Rational& a, std::int64_t y) {
    if (a.neg_inf) return true;
    if (a.pos_inf) return false;
    return a.num < y * a.den;
}

// Intersection abscissa of the parabolas rooted at rows v < q.
Rational intersect(std::int64_t q, std::int64_t fq, std::int64_t v, std::int64_t fv) {
    return Rational{(fq + q * q) - (fv + v * v), 2 * (q - v)};
}

}  // namespace

BinaryMask extract_boundary(const BinaryMask& mask, BoundaryMode mode) {
    const int h = mask.height();
    const int w = mask.width();
    BinaryMask out(h, w);
    const int dy[4] = {-1, 1, 0, 0};
    const int dx[4] = {0, 0, -1, 1};
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const bool fg = mask(y, x);
            if (!fg && mode == BoundaryMode::inner) continue;
            for (int k = 0; k < 4; ++k) {
                const int ny = y + dy[k];
                const int nx = x + dx[k];
                if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                if (mask(ny, nx) != fg) {
                    out.set(y, x, true);
                    break;
                }
            }
        }
    }
    return out;
}

FeatureTransform feature_transform(const BinaryMask& sites) {
    const int h = sites.height();
    const int w = sites.width();

    // Row pass: horizontal offset to the nearest site in the same row, ties
    // going left.
    Grid<std::int64_t> row_sq(h, w, kInf);
    Grid<std::int32_t> row_col(h, w, -1);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        int last = -1;
        for (int x = 0; x < w; ++x) {
            if (sites(y, x)) last = x;
            if (last >= 0) {
                row_col(y, x) = last;
                row_sq(y, x) = static_cast<std::int64_t>(x - last) * (x - last);
            }
        }
        int next = -1;
        for (int x = w - 1; x >= 0; --x) {
            if (sites(y, x)) next = x;
            if (next >= 0) {
                const std::int64_t d = static_cast<std::int64_t>(next - x) * (next - x);
                if (d < row_sq(y, x)) {
                    row_sq(y, x) = d;
                    row_col(y, x) = next;
                }
            }
        }
    }

    FeatureTransform out{Grid<std::int64_t>(h, w, kInf), Grid<std::int32_t>(h, w, -1), false};
    for (int y = 0; y < h && !out.has_sites; ++y) out.has_sites = row_sq(y, 0) != kInf;
    if (!out.has_sites) return out;

    // Column pass: lower envelope of the parabolas (y - q)^2 + row_sq(q).
#pragma omp parallel
    {
        std::vector<std::int64_t> roots(h);
        std::vector<Rational> bounds(h + 1);
#pragma omp for schedule(static)
        for (int x = 0; x < w; ++x) {
            int k = -1;
            for (int q = 0; q < h; ++q) {
                const std::int64_t fq = row_sq(q, x);
                if (fq == kInf) continue;
                if (k < 0) {
                    k = 0;
                    roots[0] = q;
                    bounds[0] = Rational{0, 1, true, false};
                    bounds[1] = Rational{0, 1, false, true};
                    continue;
                }
                // bounds[0] is -inf, so k never drops below zero.
                Rational s = intersect(q, fq, roots[k], row_sq(roots[k], x));
                while (less_equal(s, bounds[k])) {
                    --k;
                    s = intersect(q, fq, roots[k], row_sq(roots[k], x));
                }
                ++k;
                roots[k] = q;
                bounds[k] = s;
                bounds[k + 1] = Rational{0, 1, false, true};
            }
            k = 0;
            for (int y = 0; y < h; ++y) {
                while (less_than_int(bounds[k + 1], y)) ++k;
                const std::int64_t q = roots[k];
                out.squared(y, x) = (y - q) * (y - q) + row_sq(q, x);
                out.nearest(y, x) = static_cast<std::int32_t>(q * w + row_col(q, x));
            }
        }
    }
    return out;
}

DistanceField distance_transform(const BinaryMask& boundary) {
    const FeatureTransform ft = feature_transform(boundary);
    DistanceField field{Grid<double>(boundary.height(), boundary.width(),
                                     std::numeric_limits<double>::infinity()),
                        ft.has_sites};
    if (!ft.has_sites) return field;
    for (std::size_t i = 0; i < field.values.size(); ++i) {
        field.values[i] = std::sqrt(static_cast<double>(ft.squared[i]));
    }
    return field;
}

BoundaryDistributionMap bdm_from_distance(const DistanceField& field, double sigma, bool normalized) {
    if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be > 0");
    BoundaryDistributionMap bdm{Grid<double>(field.values.height(), field.values.width(), 0.0), sigma,
                                normalized};
    if (!field.has_boundary) return bdm;
    const double scale = normalized ? 1.0 : 1.0 / (std::sqrt(2.0 * std::numbers::pi) * sigma);
    const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
    for (std::size_t i = 0; i < bdm.values.size(); ++i) {
        const double d = field.values[i];
        bdm.values[i] = scale * std::exp(-(d * d) * inv_two_var);
    }
    return bdm;
}

BoundaryDistributionMap ideal_bdm(const BinaryMask& mask, double sigma, bool normalized,
                                  BoundaryMode mode) {
    if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be > 0");
    return bdm_from_distance(distance_transform(extract_boundary(mask, mode)), sigma, normalized);
}

}  // namespace bdg
