#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "bdg/bdm.hpp"
#include "bdg/grid.hpp"

namespace bdg {

/// 8-bit RGB image, interleaved row-major.
struct RgbImage {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(int y, int x, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
};

/// Reads any 8- or 16-bit image as RGB. 16-bit samples keep their high byte;
/// grayscale is replicated and alpha dropped. Throws DataError.
RgbImage read_rgb(const std::filesystem::path& path);

/// Reads an 8-bit gray image as-is; 16-bit samples keep their high byte and
/// colour is converted to luma first. Throws DataError.
Grid<std::uint8_t> read_gray(const std::filesystem::path& path);

/// read_gray, then 1 where the value is >= 128.
BinaryMask read_mask(const std::filesystem::path& path);

void write_gray(const std::filesystem::path& path, const Grid<std::uint8_t>& image);
void write_mask(const std::filesystem::path& path, const BinaryMask& mask);

/// Values in [0, 1] scaled by 255 and rounded; anything outside is clamped.
Grid<std::uint8_t> to_preview(const Grid<double>& values);

/// Text header line "bdm <height> <width> <sigma> <normalized>" followed by
/// height*width little-endian float32 values.
void write_bdm_raw(const std::filesystem::path& path, const BoundaryDistributionMap& bdm);
BoundaryDistributionMap read_bdm_raw(const std::filesystem::path& path);

}  // namespace bdg
