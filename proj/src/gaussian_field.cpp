#include "msinfer/gaussian_field.hpp"

#include <cmath>
#include <sstream>

namespace msinfer {

double power_variogram(double h, double lambda, double nu) noexcept {
    return h <= 0.0 ? 0.0 : std::pow(h / lambda, nu);
}

Eigen::MatrixXd build_covariance(const Grid& grid, const CovarianceSpec& spec) {
    require(spec.lambda > 0.0 && std::isfinite(spec.lambda), "covariance range must be positive");
    require(spec.nu > 0.0 && spec.nu <= 2.0, "covariance exponent must lie in (0, 2]");

    const std::size_t d = grid.size();
    Eigen::MatrixXd c(d, d);
    if (spec.kind == CovarianceKind::PoweredExponential) {
        for (std::size_t a = 0; a < d; ++a) {
            c(a, a) = 1.0;
            for (std::size_t b = 0; b < a; ++b) {
                const double v = std::exp(-power_variogram(grid.distance(a, b), spec.lambda, spec.nu));
                c(a, b) = v;
                c(b, a) = v;
            }
        }
        return c;
    }

    const Point origin = grid.site(0);
    std::vector<double> g0(d);
    for (std::size_t a = 0; a < d; ++a)
        g0[a] = power_variogram(distance(grid.site(a), origin), spec.lambda, spec.nu);
    for (std::size_t a = 0; a < d; ++a) {
        c(a, a) = 2.0 * g0[a];
        for (std::size_t b = 0; b < a; ++b) {
            const double v = g0[a] + g0[b] - power_variogram(grid.distance(a, b), spec.lambda, spec.nu);
            c(a, b) = v;
            c(b, a) = v;
        }
    }
    // The origin row is identically zero; the sum above can leave rounding dust.
    c.row(0).setZero();
    c.col(0).setZero();
    return c;
}

FieldFactorization::FieldFactorization(Grid grid, Eigen::MatrixXd cov, const JitterPolicy& policy)
    : grid_(std::move(grid)) {
    const auto d = static_cast<Eigen::Index>(grid_.size());
    require(cov.rows() == d && cov.cols() == d, "covariance dimension does not match grid");

    for (Eigen::Index a = 0; a < d; ++a) {
        if (cov(a, a) == 0.0) {
            if (cov.row(a).cwiseAbs().maxCoeff() != 0.0)
                throw FactorizationError("zero variance at site " + std::to_string(a) +
                                             " with nonzero covariances",
                                         cov.selfadjointView<Eigen::Lower>().eigenvalues().minCoeff());
            continue;
        }
        active_.push_back(static_cast<std::size_t>(a));
    }
    const auto m = static_cast<Eigen::Index>(active_.size());
    Eigen::MatrixXd sub(m, m);
    for (Eigen::Index a = 0; a < m; ++a)
        for (Eigen::Index b = 0; b < m; ++b) sub(a, b) = cov(active_[a], active_[b]);

    for (double jitter : policy.ladder) {
        Eigen::MatrixXd trial = sub;
        trial.diagonal().array() += jitter;
        Eigen::LLT<Eigen::MatrixXd> llt(trial);
        if (llt.info() != Eigen::Success) continue;
        Eigen::MatrixXd l = llt.matrixL();
        const auto diag = l.diagonal().array();
        if (!diag.isFinite().all() || (diag <= 0.0).any()) continue;
        l_active_ = std::move(l);
        jitter_ = jitter;
        return;
    }

    const double min_eig = m > 0 ? Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(sub, Eigen::EigenvaluesOnly)
                                       .eigenvalues()
                                       .minCoeff()
                                 : 0.0;
    std::ostringstream msg;
    msg << "Cholesky factorization failed at maximum jitter " << policy.ladder.back()
        << "; minimum eigenvalue estimate " << min_eig;
    throw FactorizationError(msg.str(), min_eig);
}

Eigen::MatrixXd FieldFactorization::lower() const {
    const auto d = static_cast<Eigen::Index>(dim());
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t a = 0; a < active_.size(); ++a)
        for (std::size_t b = 0; b <= a; ++b) l(active_[a], active_[b]) = l_active_(a, b);
    return l;
}

Eigen::MatrixXd FieldFactorization::sample_block(RngStream& rng, std::size_t k) const {
    const auto m = static_cast<Eigen::Index>(active_.size());
    const auto cols = static_cast<Eigen::Index>(k);
    Eigen::MatrixXd z(m, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index a = 0; a < m; ++a) z(a, c) = rng.normal();
    Eigen::MatrixXd y = l_active_.triangularView<Eigen::Lower>() * z;

    if (active_.size() == dim()) return y;
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim()), cols);
    for (Eigen::Index a = 0; a < m; ++a) out.row(static_cast<Eigen::Index>(active_[a])) = y.row(a);
    return out;
}

void FieldFactorization::sample_into(RngStream& rng, std::span<double> out) const {
    require(out.size() == dim(), "output span does not match field dimension");
    const Eigen::MatrixXd y = sample_block(rng, 1);
    for (std::size_t a = 0; a < out.size(); ++a) out[a] = y(static_cast<Eigen::Index>(a), 0);
}

FieldFactorization factorize(const Grid& grid, const CovarianceSpec& spec, const JitterPolicy& policy) {
    return FieldFactorization(grid, build_covariance(grid, spec), policy);
}

FieldSample sample_gaussian(const FieldFactorization& fact, RngStream& rng) {
    FieldSample s{fact.grid(), std::vector<double>(fact.dim()), std::nullopt, std::nullopt, rng.seed(), false};
    fact.sample_into(rng, s.values);
    return s;
}

}  // namespace msinfer
