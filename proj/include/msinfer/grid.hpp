#pragma once

#include <cstddef>
#include <utility>

namespace msinfer {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

[[nodiscard]] double distance(Point a, Point b) noexcept;

/// Regular 2-D lattice. Column index i runs along x, row index j along y;
/// flat site indices are row-major (index = j * nx + i).
class Grid {
public:
    Grid(std::size_t nx, std::size_t ny, double extent_x, double extent_y);

    [[nodiscard]] std::size_t nx() const noexcept { return nx_; }
    [[nodiscard]] std::size_t ny() const noexcept { return ny_; }
    [[nodiscard]] std::size_t size() const noexcept { return nx_ * ny_; }
    [[nodiscard]] double extent_x() const noexcept { return extent_x_; }
    [[nodiscard]] double extent_y() const noexcept { return extent_y_; }
    [[nodiscard]] double spacing_x() const noexcept { return extent_x_ / static_cast<double>(nx_ - 1); }
    [[nodiscard]] double spacing_y() const noexcept { return extent_y_ / static_cast<double>(ny_ - 1); }

    [[nodiscard]] Point site(std::size_t i, std::size_t j) const;
    [[nodiscard]] Point site(std::size_t index) const { return site(index % nx_, index / nx_); }
    [[nodiscard]] std::size_t index(std::size_t i, std::size_t j) const noexcept { return j * nx_ + i; }
    [[nodiscard]] double distance(std::size_t a, std::size_t b) const { return msinfer::distance(site(a), site(b)); }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    std::size_t nx_;
    std::size_t ny_;
    double extent_x_;
    double extent_y_;
};

Grid make_grid(std::size_t nx, std::size_t ny, std::pair<double, double> extent);

}  // namespace msinfer
