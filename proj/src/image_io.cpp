#include "bdg/image_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "bdg/errors.hpp"

namespace bdg {

namespace {

cv::Mat load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw DataError("file not found: " + path.string());
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (m.empty()) throw DataError("cannot decode image: " + path.string());
    if (m.depth() == CV_16U) {
        cv::Mat eight(m.rows, m.cols, CV_MAKETYPE(CV_8U, m.channels()));
        const int n = m.cols * m.channels();
        for (int y = 0; y < m.rows; ++y) {
            const auto* src = m.ptr<std::uint16_t>(y);
            auto* dst = eight.ptr<std::uint8_t>(y);
            for (int i = 0; i < n; ++i) dst[i] = static_cast<std::uint8_t>(src[i] >> 8);
        }
        m = eight;
    } else if (m.depth() != CV_8U) {
        throw DataError("unsupported sample depth in " + path.string());
    }
    return m;
}

/// Integer BT.601 luma, rounded to nearest.
std::uint8_t luma(int r, int g, int b) { return static_cast<std::uint8_t>((299 * r + 587 * g + 114 * b + 500) / 1000); }

void put_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    char bytes[4];
    std::memcpy(bytes, &bits, 4);
    os.write(bytes, 4);
}

float get_f32(std::istream& is) {
    char bytes[4];
    is.read(bytes, 4);
    std::uint32_t bits;
    std::memcpy(&bits, bytes, 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    float v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

}  // namespace

RgbImage read_rgb(const std::filesystem::path& path) {
    const cv::Mat m = load(path);
    const int ch = m.channels();
    if (ch != 1 && ch != 3 && ch != 4) throw DataError("unsupported channel count in " + path.string());
    RgbImage img{m.rows, m.cols, std::vector<std::uint8_t>(static_cast<std::size_t>(m.rows) * m.cols * 3)};
    for (int y = 0; y < m.rows; ++y) {
        const auto* src = m.ptr<std::uint8_t>(y);
        std::uint8_t* dst = img.pixels.data() + static_cast<std::size_t>(y) * m.cols * 3;
        for (int x = 0; x < m.cols; ++x) {
            if (ch == 1) {
                dst[3 * x] = dst[3 * x + 1] = dst[3 * x + 2] = src[x];
            } else {
                // OpenCV stores BGR(A).
                dst[3 * x] = src[ch * x + 2];
                dst[3 * x + 1] = src[ch * x + 1];
                dst[3 * x + 2] = src[ch * x];
            }
        }
    }
    return img;
}

Grid<std::uint8_t> read_gray(const std::filesystem::path& path) {
    const cv::Mat m = load(path);
    const int ch = m.channels();
    if (ch != 1 && ch != 3 && ch != 4) throw DataError("unsupported channel count in " + path.string());
    Grid<std::uint8_t> g(m.rows, m.cols);
    for (int y = 0; y < m.rows; ++y) {
        const auto* src = m.ptr<std::uint8_t>(y);
        for (int x = 0; x < m.cols; ++x) {
            g(y, x) = ch == 1 ? src[x] : luma(src[ch * x + 2], src[ch * x + 1], src[ch * x]);
        }
    }
    return g;
}

BinaryMask read_mask(const std::filesystem::path& path) {
    const Grid<std::uint8_t> g = read_gray(path);
    BinaryMask m(g.height(), g.width());
    for (std::size_t i = 0; i < g.size(); ++i) m.set(i, g[i] >= 128);
    return m;
}

void write_gray(const std::filesystem::path& path, const Grid<std::uint8_t>& image) {
    cv::Mat m(image.height(), image.width(), CV_8UC1);
    std::memcpy(m.data, image.data(), image.size());
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), m)) throw DataError("cannot write image: " + path.string());
}

void write_mask(const std::filesystem::path& path, const BinaryMask& mask) {
    Grid<std::uint8_t> g(mask.height(), mask.width());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = mask[i] ? 255 : 0;
    write_gray(path, g);
}

Grid<std::uint8_t> to_preview(const Grid<double>& values) {
    Grid<std::uint8_t> g(values.height(), values.width());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = std::clamp(values[i], 0.0, 1.0);
        g[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return g;
}

void write_bdm_raw(const std::filesystem::path& path, const BoundaryDistributionMap& bdm) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write " + path.string());
    char sigma[64];
    std::snprintf(sigma, sizeof sigma, "%.17g", bdm.sigma);
    os << "bdm " << bdm.values.height() << ' ' << bdm.values.width() << ' ' << sigma << ' '
       << (bdm.normalized ? 1 : 0) << '\n';
    for (double v : bdm.values.values()) put_f32(os, static_cast<float>(v));
    if (!os) throw DataError("write failed: " + path.string());
}

BoundaryDistributionMap read_bdm_raw(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    std::string header;
    std::getline(is, header);
    std::istringstream hs(header);
    std::string magic;
    int h = 0, w = 0, normalized = 0;
    double sigma = 0.0;
    if (!(hs >> magic >> h >> w >> sigma >> normalized) || magic != "bdm" || h < 1 || w < 1) {
        throw DataError("malformed BDM header in " + path.string());
    }
    BoundaryDistributionMap bdm{Grid<double>(h, w), sigma, normalized != 0};
    for (auto& v : bdm.values.values()) v = get_f32(is);
    if (!is) throw DataError("truncated BDM grid in " + path.string());
    return bdm;
}

}  // namespace bdg
