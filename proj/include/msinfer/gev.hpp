#pragma once

#include "msinfer/bundle.hpp"
#include "msinfer/error.hpp"
#include "msinfer/optimize.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace msinfer {

/// Block-specific locations with a shared scale and shape.
struct GevParams {
    std::vector<double> mu;
    double sigma = 1.0;
    double xi = 0.0;

    [[nodiscard]] std::size_t n_blocks() const noexcept { return mu.size(); }
    bool operator==(const GevParams&) const = default;
};

/// Extremes for one site: value(year, block) at values[year * n_blocks + block].
struct BlockSeries {
    std::size_t n_blocks = 1;
    std::size_t n_years = 0;
    std::vector<double> values;

    [[nodiscard]] double at(std::size_t year, std::size_t block) const { return values[year * n_blocks + block]; }
};

struct BlockExtremes {
    std::vector<double> values;
    /// Trailing observations that did not fill a whole block.
    std::size_t dropped = 0;
};

/// Per-block extremes of consecutive blocks. With negate the result is the
/// block maximum of -x (the negated minimum); otherwise the block minimum.
[[nodiscard]] BlockExtremes block_minima(std::span<const double> series, std::size_t block_length, bool negate);

/// GEV distribution function; zero or one outside the support.
[[nodiscard]] double gev_cdf(double z, double mu, double sigma, double xi);
[[nodiscard]] double gev_quantile(double p, double mu, double sigma, double xi);
/// Log density; -inf outside the support. Gumbel form when |xi| < 1e-6.
[[nodiscard]] double gev_log_density(double z, double mu, double sigma, double xi);
[[nodiscard]] double gev_loglik(const BlockSeries& series, const GevParams& params);

/// t = [1 + xi (z - mu_b) / sigma]^(1/xi), exp((z - mu_b) / sigma) at xi = 0.
/// Throws InvalidArgument outside the support.
[[nodiscard]] double to_frechet(double z, const GevParams& params, std::size_t block);
[[nodiscard]] double from_frechet(double t, const GevParams& params, std::size_t block);

struct GevFit {
    GevParams params;
    double loglik = 0.0;
    double initial_loglik = 0.0;
    bool converged = false;
    std::string message;
};

/// Non-convergence; carries the best point found.
class GevFitError : public Error {
public:
    GevFitError(const std::string& what, GevFit best) : Error(ErrorKind::Numerical, what), best_(std::move(best)) {}
    [[nodiscard]] const GevFit& best() const noexcept { return best_; }

private:
    GevFit best_;
};

/// Maximum likelihood with xi in [-0.5, 0.5]. Needs at least 5 years.
[[nodiscard]] GevFit fit_gev(const BlockSeries& series, const OptimizerOptions& options = {});

struct SiteFits {
    std::size_t n_blocks = 0;
    std::size_t n_years = 0;
    std::size_t dropped = 0;
    /// One per site, row-major site order.
    std::vector<GevFit> fits;
    /// Year-major extremes: image y * n_blocks + b holds block b of year y.
    DatasetBundle extremes;
};

/// Block extremes of every site of a series bundle (time slices as samples),
/// then independent GEV fits. A site that fails to converge keeps its best
/// point with converged = false.
[[nodiscard]] SiteFits fit_gev_sites(const DatasetBundle& series, std::size_t block_length, std::size_t n_blocks,
                                     bool negate);

/// Image k uses block k % n_blocks. Output is on the unit Frechet scale.
[[nodiscard]] DatasetBundle to_frechet_bundle(const DatasetBundle& extremes, const std::vector<GevParams>& params);

/// Columns: site_i, site_j, mu_1..mu_B, sigma, xi, loglik, converged.
void write_gev_csv(const std::filesystem::path& path, const Grid& grid, const std::vector<GevFit>& fits);
[[nodiscard]] std::vector<GevParams> read_gev_csv(const std::filesystem::path& path, const Grid& grid);

}  // namespace msinfer
