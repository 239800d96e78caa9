#pragma once

#include "msinfer/error.hpp"
#include "msinfer/grid.hpp"
#include "msinfer/rng.hpp"
#include "msinfer/types.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <vector>

namespace msinfer {

enum class CovarianceKind {
    /// rho(h) = exp{-(|h|/lambda)^nu}; unit variance, stationary.
    PoweredExponential,
    /// C(s,t) = g(s) + g(t) - g(s-t), g(h) = (|h|/lambda)^nu: the process
    /// with semivariogram g pinned to zero at grid site (0,0).
    VariogramInduced,
};

struct CovarianceSpec {
    CovarianceKind kind = CovarianceKind::PoweredExponential;
    double lambda = 1.0;
    double nu = 1.0;
};

/// (|h|/lambda)^nu
[[nodiscard]] double power_variogram(double h, double lambda, double nu) noexcept;

[[nodiscard]] Eigen::MatrixXd build_covariance(const Grid& grid, const CovarianceSpec& spec);

struct JitterPolicy {
    std::vector<double> ladder{0.0, 1e-10, 1e-8, 1e-6, 1e-4};
};

/// Thrown when every rung of the jitter ladder fails.
class FactorizationError : public Error {
public:
    FactorizationError(const std::string& what, double min_eigenvalue)
        : Error(ErrorKind::Numerical, what), min_eigenvalue_(min_eigenvalue) {}
    [[nodiscard]] double min_eigenvalue() const noexcept { return min_eigenvalue_; }

private:
    double min_eigenvalue_;
};

/// Cholesky factor of a grid covariance. Sites whose variance is exactly zero
/// (the pinned origin of the variogram-induced covariance) are held out of the
/// factorization and always sample to exactly 0.
class FieldFactorization {
public:
    FieldFactorization(Grid grid, Eigen::MatrixXd cov, const JitterPolicy& policy = {});

    [[nodiscard]] const Grid& grid() const noexcept { return grid_; }
    [[nodiscard]] std::size_t dim() const noexcept { return grid_.size(); }
    [[nodiscard]] double jitter() const noexcept { return jitter_; }
    [[nodiscard]] const std::vector<std::size_t>& active_sites() const noexcept { return active_; }

    /// Full D x D lower-triangular factor (zero rows/columns at pinned sites).
    [[nodiscard]] Eigen::MatrixXd lower() const;

    /// D x k matrix whose columns are independent draws L z.
    [[nodiscard]] Eigen::MatrixXd sample_block(RngStream& rng, std::size_t k) const;
    void sample_into(RngStream& rng, std::span<double> out) const;

private:
    Grid grid_;
    std::vector<std::size_t> active_;
    Eigen::MatrixXd l_active_;
    double jitter_ = 0.0;
};

[[nodiscard]] FieldFactorization factorize(const Grid& grid, const CovarianceSpec& spec,
                                           const JitterPolicy& policy = {});

[[nodiscard]] FieldSample sample_gaussian(const FieldFactorization& fact, RngStream& rng);

}  // namespace msinfer
