#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace bdg {

/// Dense row-major 2-D array. The building block for masks, distance fields
/// and per-image maps that never need gradients.
template <typename T>
class Grid {
public:
    Grid() = default;
    Grid(int height, int width, T fill = T{})
        : height_(height), width_(width) {
        if (height < 1 || width < 1) {
            throw std::invalid_argument("grid dimensions must be >= 1, got " +
                                        std::to_string(height) + "x" + std::to_string(width));
        }
        values_.assign(static_cast<std::size_t>(height) * width, fill);
    }

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    T& operator()(int y, int x) { return values_[static_cast<std::size_t>(y) * width_ + x]; }
    const T& operator()(int y, int x) const {
        return values_[static_cast<std::size_t>(y) * width_ + x];
    }
    T& operator[](std::size_t i) { return values_[i]; }
    const T& operator[](std::size_t i) const { return values_[i]; }

    T* data() noexcept { return values_.data(); }
    const T* data() const noexcept { return values_.data(); }
    std::vector<T>& values() noexcept { return values_; }
    const std::vector<T>& values() const noexcept { return values_; }

    template <typename U>
    bool same_shape(const Grid<U>& other) const noexcept {
        return height_ == other.height() && width_ == other.width();
    }

    friend bool operator==(const Grid& a, const Grid& b) {
        return a.height_ == b.height_ && a.width_ == b.width_ && a.values_ == b.values_;
    }

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<T> values_;
};

/// Ground-truth or predicted foreground labels; every value is exactly 0 or 1.
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int height, int width) : grid_(height, width, 0) {}

    /// Accepts only 0/1 values.
    static BinaryMask from_grid(Grid<std::uint8_t> grid) {
        for (auto v : grid.values()) {
            if (v > 1) throw std::invalid_argument("binary mask values must be 0 or 1");
        }
        BinaryMask m;
        m.grid_ = std::move(grid);
        return m;
    }

    int height() const noexcept { return grid_.height(); }
    int width() const noexcept { return grid_.width(); }
    std::size_t size() const noexcept { return grid_.size(); }

    bool operator()(int y, int x) const { return grid_(y, x) != 0; }
    bool operator[](std::size_t i) const { return grid_[i] != 0; }
    void set(int y, int x, bool v) { grid_(y, x) = v ? 1 : 0; }
    void set(std::size_t i, bool v) { grid_[i] = v ? 1 : 0; }

    std::size_t count() const noexcept {
        std::size_t n = 0;
        for (auto v : grid_.values()) n += v;
        return n;
    }

    const Grid<std::uint8_t>& grid() const noexcept { return grid_; }

    friend bool operator==(const BinaryMask& a, const BinaryMask& b) { return a.grid_ == b.grid_; }

private:
    Grid<std::uint8_t> grid_;
};

}  // namespace bdg
