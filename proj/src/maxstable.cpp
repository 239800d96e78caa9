#include "msinfer/maxstable.hpp"

#include "msinfer/error.hpp"
#include "msinfer/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>

namespace msinfer {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
const double kLogSqrt2Pi = 0.5 * std::log(2.0 * std::numbers::pi);
const double kSqrt2Pi = std::sqrt(2.0 * std::numbers::pi);

double log_sum_exp(double a, double b) noexcept {
    if (a == -kInf) return b;
    if (b == -kInf) return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

void check_positive(double z1, double z2) {
    require(z1 > 0.0 && z2 > 0.0 && std::isfinite(z1) && std::isfinite(z2),
            "exponent function arguments must be positive and finite");
}

}  // namespace

TruncationPolicy TruncationPolicy::defaults_for(Family family, const Grid& grid) {
    TruncationPolicy t;
    t.c_bound = family == Family::Schlather ? 3.5 : std::min(1e3, static_cast<double>(grid.size()));
    return t;
}

double normal_cdf(double x) noexcept { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_pdf(double x) noexcept { return std::exp(-0.5 * x * x - kLogSqrt2Pi); }

double log_normal_cdf(double x) noexcept {
    if (x > -30.0) return std::log(normal_cdf(x));
    // Mills-ratio expansion; erfc underflows below about -37.
    const double x2 = x * x;
    const double series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
    return -0.5 * x2 - kLogSqrt2Pi - std::log(-x) + std::log(series);
}

double semivariogram(const DependenceParams& p, double h) noexcept { return power_variogram(h, p.lambda, p.nu); }

double correlation(const DependenceParams& p, double h) noexcept { return std::exp(-semivariogram(p, h)); }

double exponent_V(const MaxStableModel& model, double z1, double z2, double h) {
    check_positive(z1, z2);
    require(h >= 0.0, "distance must be nonnegative");
    if (model.family == Family::BrownResnick) {
        const double a = std::sqrt(2.0 * semivariogram(model.params, h));
        if (a == 0.0) return std::max(1.0 / z1, 1.0 / z2);
        const double r = std::log(z2 / z1) / a;
        if (!std::isfinite(a)) return 1.0 / z1 + 1.0 / z2;
        return normal_cdf(0.5 * a + r) / z1 + normal_cdf(0.5 * a - r) / z2;
    }
    const double rho = correlation(model.params, h);
    const double s = z1 + z2;
    const double inner = std::max(0.0, 1.0 - 2.0 * (rho + 1.0) * z1 * z2 / (s * s));
    return 0.5 * (1.0 / z1 + 1.0 / z2) * (1.0 + std::sqrt(inner));
}

ExponentDerivatives exponent_derivatives(const MaxStableModel& model, double z1, double z2, double h) {
    check_positive(z1, z2);
    require(h > 0.0, "exponent derivatives need a positive separation");
    ExponentDerivatives d;
    if (model.family == Family::BrownResnick) {
        const double a = std::sqrt(2.0 * semivariogram(model.params, h));
        const double r = std::log(z2 / z1) / a;
        const double w = 0.5 * a + r;
        const double v = 0.5 * a - r;
        d.v = normal_cdf(w) / z1 + normal_cdf(v) / z2;
        // phi(w) / z1 == phi(v) / z2, which collapses the cross terms.
        d.v1 = -normal_cdf(w) / (z1 * z1);
        d.v2 = -normal_cdf(v) / (z2 * z2);
        d.v12 = -normal_pdf(w) / (a * z1 * z1 * z2);
        return d;
    }
    const double rho = correlation(model.params, h);
    const double c = std::sqrt(z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2);
    d.v = (z1 + z2 + c) / (2.0 * z1 * z2);
    d.v1 = -(1.0 + (z2 - rho * z1) / c) / (2.0 * z1 * z1);
    d.v2 = -(1.0 + (z1 - rho * z2) / c) / (2.0 * z2 * z2);
    d.v12 = -(1.0 - rho * rho) / (2.0 * c * c * c);
    return d;
}

double log_pair_density(const MaxStableModel& model, double z1, double z2, double h) {
    check_positive(z1, z2);
    if (model.family == Family::BrownResnick) {
        const double a = std::sqrt(2.0 * semivariogram(model.params, h));
        if (!(a > 0.0) || !std::isfinite(a)) return -kInf;
        const double lz1 = std::log(z1);
        const double lz2 = std::log(z2);
        const double r = (lz2 - lz1) / a;
        const double w = 0.5 * a + r;
        const double v = 0.5 * a - r;
        const double big_v = normal_cdf(w) / z1 + normal_cdf(v) / z2;
        const double log_a = log_normal_cdf(w) + log_normal_cdf(v) - 2.0 * lz1 - 2.0 * lz2;
        const double log_b = -0.5 * w * w - kLogSqrt2Pi - std::log(a) - 2.0 * lz1 - lz2;
        return log_sum_exp(log_a, log_b) - big_v;
    }
    const auto d = exponent_derivatives(model, z1, z2, h);
    const double q = d.v1 * d.v2 - d.v12;
    if (!(q > 0.0) || !std::isfinite(q)) return -kInf;
    return std::log(q) - d.v;
}

double extremal_coefficient_from_rho(double rho) noexcept { return 1.0 + std::sqrt(0.5 * (1.0 - rho)); }

double extremal_coefficient(const MaxStableModel& model, double h) {
    require(h >= 0.0, "distance must be nonnegative");
    if (model.family == Family::BrownResnick)
        return 2.0 * normal_cdf(std::sqrt(0.5 * semivariogram(model.params, h)));
    return extremal_coefficient_from_rho(correlation(model.params, h));
}

// ---------------------------------------------------------------------------
// Simulation

namespace {

CovarianceSpec driving_covariance(const MaxStableModel& model) {
    return {model.family == Family::BrownResnick ? CovarianceKind::VariogramInduced
                                                 : CovarianceKind::PoweredExponential,
            model.params.lambda, model.params.nu};
}

constexpr std::size_t kGaussianBlock = 64;

}  // namespace

MaxStableSimulator::MaxStableSimulator(MaxStableModel model, Grid grid, TruncationPolicy trunc,
                                       const JitterPolicy& jitter)
    : model_(model),
      trunc_(trunc),
      fact_(factorize(grid, driving_covariance(model), jitter)) {
    require(model.params.valid(), "invalid dependence parameters");
    require(trunc.c_bound > 0.0 && trunc.max_poisson_points >= 1, "invalid truncation policy");
    const std::size_t nx = grid.nx();
    const std::size_t ny = grid.ny();
    col_of_.resize(grid.size());
    row_of_.resize(grid.size());
    for (std::size_t s = 0; s < grid.size(); ++s) {
        col_of_[s] = s % nx;
        row_of_[s] = s / nx;
    }
    if (model.family == Family::BrownResnick) {
        offset_variogram_.resize(nx * ny);
        for (std::size_t dj = 0; dj < ny; ++dj)
            for (std::size_t di = 0; di < nx; ++di)
                offset_variogram_[dj * nx + di] =
                    semivariogram(model.params, std::hypot(static_cast<double>(di) * grid.spacing_x(),
                                                           static_cast<double>(dj) * grid.spacing_y()));
    }
}

FieldSample MaxStableSimulator::simulate(RngStream& rng, SimulationInfo* info) const {
    const std::size_t d = fact_.dim();
    const std::size_t nx = fact_.grid().nx();
    const bool brown = model_.family == Family::BrownResnick;
    const double scale = brown ? 1.0 : kSqrt2Pi;
    const double bound = trunc_.c_bound * scale;

    RngStream arrivals = rng.split(0);
    RngStream gaussians = rng.split(1);
    RngStream shifts = rng.split(2);

    // Brown-Resnick runs on the log scale; Schlather on the natural scale.
    std::vector<double> z(d, brown ? -kInf : 0.0);
    double min_z = 0.0;
    double arrival = 0.0;
    std::size_t used = 0;
    bool truncated = false;

    Eigen::MatrixXd block;
    std::size_t col = kGaussianBlock;
    std::vector<double> log_w(brown ? d : 0);
    const double log_d = std::log(static_cast<double>(d));

    for (;;) {
        arrival += arrivals.exponential();
        const double xi = 1.0 / arrival;
        if (xi * bound < min_z) break;
        if (used == trunc_.max_poisson_points) {
            truncated = true;
            break;
        }
        if (col == kGaussianBlock) {
            block = fact_.sample_block(gaussians, kGaussianBlock);
            col = 0;
        }
        const double* eps = block.col(static_cast<Eigen::Index>(col)).data();
        ++col;
        ++used;

        double lo = kInf;
        if (brown) {
            const std::size_t y = shifts.uniform_index(d);
            const std::size_t yi = col_of_[y];
            const std::size_t yj = row_of_[y];
            double peak = -kInf;
            for (std::size_t s = 0; s < d; ++s) {
                const std::size_t di = col_of_[s] > yi ? col_of_[s] - yi : yi - col_of_[s];
                const std::size_t dj = row_of_[s] > yj ? row_of_[s] - yj : yj - row_of_[s];
                log_w[s] = eps[s] - eps[y] - offset_variogram_[dj * nx + di];
                peak = std::max(peak, log_w[s]);
            }
            double total = 0.0;
            for (std::size_t s = 0; s < d; ++s) total += std::exp(log_w[s] - peak);
            // Normalized by the site average, so W <= d on the grid.
            const double base = std::log(xi) - peak - std::log(total) + log_d;
            for (std::size_t s = 0; s < d; ++s) {
                const double cand = base + log_w[s];
                if (cand > z[s]) z[s] = cand;
                lo = std::min(lo, z[s]);
            }
            min_z = std::exp(lo);
        } else {
            const double amp = xi * kSqrt2Pi;
            for (std::size_t s = 0; s < d; ++s) {
                const double cand = amp * eps[s];
                if (cand > z[s]) z[s] = cand;
                lo = std::min(lo, z[s]);
            }
            min_z = lo;
        }
    }

    if (brown)
        for (double& v : z) v = std::exp(v);

    if (info) *info = {used, truncated};
    return FieldSample{fact_.grid(), std::move(z), model_.family, model_.params, rng.seed(), truncated};
}

FieldSample simulate(const MaxStableModel& model, const Grid& grid, const TruncationPolicy& trunc, RngStream& rng) {
    return MaxStableSimulator(model, grid, trunc).simulate(rng);
}

std::uint64_t replicate_seed(std::uint64_t seed, std::uint64_t stream, std::size_t k) {
    return RngStream(seed, stream).split(k).next_u64();
}

std::vector<FieldSample> simulate_replicates(const MaxStableSimulator& sim, std::size_t n, std::uint64_t seed,
                                             std::uint64_t stream) {
    std::vector<std::optional<FieldSample>> slots(n);
    parallel_for(n, [&](std::size_t k) {
        RngStream rng(replicate_seed(seed, stream, k));
        slots[k] = sim.simulate(rng);
    });
    std::vector<FieldSample> out;
    out.reserve(n);
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

}  // namespace msinfer
