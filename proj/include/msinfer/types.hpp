#pragma once

#include "msinfer/grid.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace msinfer {

enum class Family { BrownResnick, Schlather };

/// Short names used on the command line and in metadata: "br", "schlather".
[[nodiscard]] std::string_view to_string(Family family) noexcept;
[[nodiscard]] Family parse_family(std::string_view name);

/// Range and smoothness of a max-stable model: lambda > 0, 0 < nu <= 2.
struct DependenceParams {
    double lambda = 1.0;
    double nu = 1.0;

    /// Throws InvalidArgument outside the parameter space.
    static DependenceParams checked(double lambda, double nu);
    [[nodiscard]] bool valid() const noexcept;

    friend bool operator==(const DependenceParams&, const DependenceParams&) = default;
};

/// One realization on a grid, values row-major (ny x nx).
struct FieldSample {
    Grid grid;
    std::vector<double> values;
    std::optional<Family> model;
    std::optional<DependenceParams> params;
    std::optional<std::uint64_t> seed;
    bool truncated = false;

    [[nodiscard]] double at(std::size_t i, std::size_t j) const { return values[grid.index(i, j)]; }

    friend bool operator==(const FieldSample&, const FieldSample&) = default;
};

}  // namespace msinfer
