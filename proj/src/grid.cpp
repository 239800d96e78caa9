#include "msinfer/grid.hpp"

#include "msinfer/error.hpp"

#include <cmath>
#include <string>

namespace msinfer {

double distance(Point a, Point b) noexcept { return std::hypot(a.x - b.x, a.y - b.y); }

Grid::Grid(std::size_t nx, std::size_t ny, double extent_x, double extent_y)
    : nx_(nx), ny_(ny), extent_x_(extent_x), extent_y_(extent_y) {
    require(nx >= 2 && ny >= 2, "grid needs at least 2x2 sites, got " + std::to_string(nx) + "x" +
                                    std::to_string(ny));
    require(std::isfinite(extent_x) && std::isfinite(extent_y) && extent_x > 0.0 && extent_y > 0.0,
            "grid extent must be positive and finite");
}

Point Grid::site(std::size_t i, std::size_t j) const {
    require(i < nx_ && j < ny_, "grid site index out of range");
    // i * extent / (n - 1) keeps both endpoints exact.
    return {static_cast<double>(i) * extent_x_ / static_cast<double>(nx_ - 1),
            static_cast<double>(j) * extent_y_ / static_cast<double>(ny_ - 1)};
}

Grid make_grid(std::size_t nx, std::size_t ny, std::pair<double, double> extent) {
    return Grid(nx, ny, extent.first, extent.second);
}

}  // namespace msinfer
