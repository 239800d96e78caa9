#pragma once

#include "msinfer/gaussian_field.hpp"
#include "msinfer/grid.hpp"
#include "msinfer/rng.hpp"
#include "msinfer/types.hpp"

#include <cstddef>
#include <optional>
#include <vector>

namespace msinfer {

struct MaxStableModel {
    Family family = Family::BrownResnick;
    DependenceParams params;
};

/// Stopping rule for the Poisson spectral construction. Points are generated
/// until xi * c_bound * scale(W) falls below the smallest running maximum, or
/// until max_poisson_points have been used (the sample is then flagged as
/// truncated).
struct TruncationPolicy {
    double c_bound = 3.5;
    std::size_t max_poisson_points = 200000;

    /// Schlather: 3.5, a bound on max{0, eps} exceeded with probability ~2.3e-4.
    /// Brown-Resnick: min(1e3, grid size); the normalized spectral functions
    /// never exceed the grid size, so the stopping rule is then exact.
    [[nodiscard]] static TruncationPolicy defaults_for(Family family, const Grid& grid);
};

// Standard normal helpers (erfc based, absolute error near machine precision).
[[nodiscard]] double normal_cdf(double x) noexcept;
[[nodiscard]] double normal_pdf(double x) noexcept;
[[nodiscard]] double log_normal_cdf(double x) noexcept;

/// Brown-Resnick semivariogram (h/lambda)^nu.
[[nodiscard]] double semivariogram(const DependenceParams& p, double h) noexcept;
/// Schlather correlation exp{-(h/lambda)^nu}.
[[nodiscard]] double correlation(const DependenceParams& p, double h) noexcept;

/// Bivariate exponent function V(z1, z2) for sites h apart, with its partial
/// derivatives. V1 = dV/dz1 <= 0, V12 = d2V/dz1dz2, and the bivariate density
/// is exp(-V) (V1 V2 - V12).
struct ExponentDerivatives {
    double v = 0.0;
    double v1 = 0.0;
    double v2 = 0.0;
    double v12 = 0.0;
};

[[nodiscard]] double exponent_V(const MaxStableModel& model, double z1, double z2, double h);
[[nodiscard]] ExponentDerivatives exponent_derivatives(const MaxStableModel& model, double z1, double z2,
                                                       double h);
/// log f(z1, z2) = log(V1 V2 - V12) - V, computed without underflow.
[[nodiscard]] double log_pair_density(const MaxStableModel& model, double z1, double z2, double h);

/// theta(h) = V(1, 1; h) in [1, 2].
[[nodiscard]] double extremal_coefficient(const MaxStableModel& model, double h);
[[nodiscard]] double extremal_coefficient_from_rho(double rho) noexcept;

struct SimulationInfo {
    std::size_t poisson_points = 0;
    bool truncated = false;
};

/// Simulator bound to one model and grid; the Gaussian factorization is built
/// once and reused for every replicate.
///
/// Brown-Resnick spectral functions are u(s) = exp{eps(s) - eps(Y) - g(s - Y)},
/// with eps the origin-pinned variogram process and Y a uniformly drawn grid
/// site, divided by their average over the grid (Dieker-Mikosch form). The
/// normalized functions are bounded by the number of sites and yield the
/// same finite-dimensional law as exp{eps(s) - g(s)}.
class MaxStableSimulator {
public:
    MaxStableSimulator(MaxStableModel model, Grid grid, TruncationPolicy trunc,
                       const JitterPolicy& jitter = {});

    [[nodiscard]] const MaxStableModel& model() const noexcept { return model_; }
    [[nodiscard]] const Grid& grid() const noexcept { return fact_.grid(); }

    [[nodiscard]] FieldSample simulate(RngStream& rng, SimulationInfo* info = nullptr) const;

private:
    MaxStableModel model_;
    TruncationPolicy trunc_;
    FieldFactorization fact_;
    std::vector<std::size_t> col_of_;
    std::vector<std::size_t> row_of_;
    std::vector<double> offset_variogram_;  // indexed by |dj| * nx + |di|
};

[[nodiscard]] FieldSample simulate(const MaxStableModel& model, const Grid& grid, const TruncationPolicy& trunc,
                                   RngStream& rng);

/// Replicate k is simulated from RngStream(s_k) with s_k drawn from
/// RngStream(seed, stream).split(k); s_k is recorded as the sample's seed.
[[nodiscard]] std::uint64_t replicate_seed(std::uint64_t seed, std::uint64_t stream, std::size_t k);
[[nodiscard]] std::vector<FieldSample> simulate_replicates(const MaxStableSimulator& sim, std::size_t n,
                                                           std::uint64_t seed, std::uint64_t stream = 0);

}  // namespace msinfer
