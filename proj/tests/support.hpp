#pragma once

// Shared fixtures for the unit, property and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "bdg/data.hpp"
#include "bdg/grid.hpp"
#include "bdg/tensor.hpp"

namespace bdg::testing {

/// Independent Bernoulli pixels.
inline BinaryMask random_mask(int h, int w, std::mt19937_64& rng, double density = 0.5) {
    std::bernoulli_distribution on(density);
    BinaryMask m(h, w);
    for (std::size_t i = 0; i < m.size(); ++i) m.set(i, on(rng));
    return m;
}

/// A few overlapping filled ellipses; closer to real masks than noise.
inline BinaryMask blob_mask(int h, int w, std::mt19937_64& rng, int blobs = 2) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    BinaryMask m(h, w);
    for (int k = 0; k < blobs; ++k) {
        const double cy = h * (0.25 + 0.5 * u(rng)), cx = w * (0.25 + 0.5 * u(rng));
        const double ry = h * (0.08 + 0.17 * u(rng)), rx = w * (0.08 + 0.17 * u(rng));
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double dy = (y - cy) / ry, dx = (x - cx) / rx;
                if (dy * dy + dx * dx <= 1.0) m.set(y, x, true);
            }
        }
    }
    return m;
}

template <typename T>
Tensor<T> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<T> t(s);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(u(rng));
    return t;
}

/// Polyp-like scenes: a reddish textured blob on a pinkish textured
/// background with mild illumination falloff.
inline std::vector<SampleRecord> synthetic_polyps(int n, int size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 12.0);
    std::vector<SampleRecord> out;
    for (int i = 0; i < n; ++i) {
        SampleRecord r;
        r.id = "synthetic_" + std::to_string(i);
        r.dataset = "synthetic";
        r.mask = blob_mask(size, size, rng, 1 + i % 2);
        r.image = RgbImage{size, size, std::vector<std::uint8_t>(static_cast<std::size_t>(size) * size * 3)};
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double dy = (y - size / 2.0) / size, dx = (x - size / 2.0) / size;
                const double light = 1.0 - 0.6 * (dy * dy + dx * dx);
                const bool fg = r.mask(y, x);
                const double base[3] = {fg ? 200.0 : 225.0, fg ? 90.0 : 150.0, fg ? 80.0 : 140.0};
                for (int c = 0; c < 3; ++c) {
                    const double v = base[c] * light + noise(rng);
                    r.image.pixels[(static_cast<std::size_t>(y) * size + x) * 3 + c] =
                        static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
                }
            }
        }
        out.push_back(std::move(r));
    }
    return out;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("bdg-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace bdg::testing
