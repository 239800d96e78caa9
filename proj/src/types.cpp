#include "msinfer/types.hpp"

#include "msinfer/error.hpp"

#include <cmath>

namespace msinfer {

std::string_view to_string(Family family) noexcept {
    return family == Family::BrownResnick ? "br" : "schlather";
}

Family parse_family(std::string_view name) {
    if (name == "br" || name == "brown-resnick" || name == "BrownResnick") return Family::BrownResnick;
    if (name == "schlather" || name == "Schlather") return Family::Schlather;
    fail(ErrorKind::InvalidArgument, "unknown max-stable family '" + std::string(name) + "'");
}

bool DependenceParams::valid() const noexcept {
    return std::isfinite(lambda) && lambda > 0.0 && std::isfinite(nu) && nu > 0.0 && nu <= 2.0;
}

DependenceParams DependenceParams::checked(double lambda, double nu) {
    DependenceParams p{lambda, nu};
    require(p.valid(), "dependence parameters out of range: lambda=" + std::to_string(lambda) +
                           " nu=" + std::to_string(nu));
    return p;
}

}  // namespace msinfer
