#include "support.hpp"

#include "msinfer/gaussian_field.hpp"

#include <cmath>

using namespace msinfer;

namespace {

double residual(const FieldFactorization& f, const Eigen::MatrixXd& c) {
    Eigen::MatrixXd l = f.lower();
    Eigen::MatrixXd target = c;
    for (std::size_t a : f.active_sites()) target(a, a) += f.jitter();
    return (l * l.transpose() - target).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("powered exponential entries") {
    const Grid g(2, 2, 1.0, 1.0);
    const auto c = build_covariance(g, {CovarianceKind::PoweredExponential, 1.0, 1.0});
    CHECK(c(0, 1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
    CHECK(c(0, 1) == doctest::Approx(0.367879).epsilon(1e-6));
    CHECK(c(0, 3) == doctest::Approx(std::exp(-std::sqrt(2.0))));
    CHECK(c.diagonal().isOnes());
    CHECK(c.isApprox(c.transpose(), 0.0));
}

TEST_CASE("variogram induced entries") {
    const Grid g(3, 3, 2.0, 2.0);
    const auto c = build_covariance(g, {CovarianceKind::VariogramInduced, 1.0, 2.0});
    CHECK(c.row(0).isZero(0.0));
    CHECK(c.col(0).isZero(0.0));
    for (std::size_t a = 1; a < g.size(); ++a) {
        const Point s = g.site(a);
        CHECK(c(a, a) == doctest::Approx(2.0 * (s.x * s.x + s.y * s.y)));
    }
    // nu = 2: C(s,t) = 2 <s,t>
    const Point s = g.site(4), t = g.site(5);
    CHECK(c(4, 5) == doctest::Approx(2.0 * (s.x * t.x + s.y * t.y)));
    CHECK((c - c.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bad covariance spec") {
    const Grid g(3, 3, 1, 1);
    CHECK_THROWS_KIND(build_covariance(g, {CovarianceKind::PoweredExponential, 0.0, 1.0}), ErrorKind::InvalidArgument);
    CHECK_THROWS_KIND(build_covariance(g, {CovarianceKind::PoweredExponential, 1.0, 2.5}), ErrorKind::InvalidArgument);
}

TEST_CASE("identity covariance factorizes exactly") {
    const Grid g(3, 2, 1, 1);
    FieldFactorization f(g, Eigen::MatrixXd::Identity(6, 6));
    CHECK(f.jitter() == 0.0);
    CHECK(f.lower().isIdentity(0.0));

    RngStream r1(11), r2(11);
    const auto s = sample_gaussian(f, r1);
    for (double v : s.values) CHECK(v == r2.normal());
}

TEST_CASE("near-singular powered exponential needs small jitter") {
    const Grid g(25, 25, 20, 20);
    const CovarianceSpec spec{CovarianceKind::PoweredExponential, 1.0, 1.99};
    const auto c = build_covariance(g, spec);
    const auto f = FieldFactorization(g, c);
    MESSAGE("jitter applied: " << f.jitter());
    CHECK(f.jitter() <= 1e-6);
    CHECK(f.jitter() == 0.0);  // regression value
    CHECK(residual(f, c) < 1e-8 * c.cwiseAbs().maxCoeff() + 1e-15);
}

TEST_CASE("variogram induced factorization residual") {
    const Grid g(10, 10, 8, 8);
    for (double nu : {0.5, 1.0, 1.9}) {
        const auto c = build_covariance(g, {CovarianceKind::VariogramInduced, 1.3, nu});
        const auto f = FieldFactorization(g, c);
        CHECK(f.active_sites().size() == g.size() - 1);
        CHECK(residual(f, c) < 1e-8 * c.cwiseAbs().maxCoeff());
    }
}

TEST_CASE("non PSD matrix is a numerical error") {
    const Grid g(2, 2, 1, 1);
    Eigen::MatrixXd c = Eigen::MatrixXd::Identity(4, 4);
    c(0, 1) = c(1, 0) = 3.0;
    try {
        FieldFactorization f(g, c);
        FAIL("factorization should fail");
    } catch (const FactorizationError& e) {
        CHECK(e.kind() == ErrorKind::Numerical);
        CHECK(e.min_eigenvalue() == doctest::Approx(-2.0));
    }
}

TEST_CASE("pinned origin samples to exactly zero") {
    const Grid g(6, 6, 5, 5);
    const auto f = factorize(g, {CovarianceKind::VariogramInduced, 1.0, 1.5});
    RngStream r(4);
    for (int k = 0; k < 20; ++k) {
        const auto s = sample_gaussian(f, r);
        CHECK(s.values[0] == 0.0);
        CHECK(s.values[7] != 0.0);
    }
}

TEST_CASE("sitewise variance of powered exponential draws") {
    const Grid g(5, 5, 4, 4);
    const auto f = factorize(g, {CovarianceKind::PoweredExponential, 1.5, 1.05});
    RngStream r(2024);
    const Eigen::MatrixXd y = f.sample_block(r, 2000);
    for (Eigen::Index a = 0; a < y.rows(); ++a) {
        const double var = y.row(a).squaredNorm() / 2000.0;
        CHECK(var >= 0.9);
        CHECK(var <= 1.1);
    }
}

TEST_CASE("empirical covariance matches at probe pairs") {
    const Grid g(6, 6, 5, 5);
    for (auto kind : {CovarianceKind::PoweredExponential, CovarianceKind::VariogramInduced}) {
        const CovarianceSpec spec{kind, 2.0, 1.2};
        const auto c = build_covariance(g, spec);
        const auto f = FieldFactorization(g, c);
        RngStream r(77);
        const Eigen::MatrixXd y = f.sample_block(r, 5000);
        // Zero-mean process: second moments estimate the covariance.
        const std::pair<int, int> probes[] = {{1, 1}, {3, 9}, {14, 20}, {7, 35}};
        for (auto [a, b] : probes) {
            const double emp = y.row(a).dot(y.row(b)) / 5000.0;
            CHECK_MESSAGE(std::abs(emp - c(a, b)) < 0.05 * std::max(1.0, std::sqrt(c(a, a) * c(b, b))),
                          "pair " << a << "," << b << " emp " << emp << " true " << c(a, b));
        }
    }
}

TEST_CASE("sampling is reproducible per stream") {
    const Grid g(5, 5, 4, 4);
    const auto f = factorize(g, {CovarianceKind::PoweredExponential, 1.0, 1.0});
    RngStream a(5, 1), b(5, 1), c(5, 2);
    CHECK(sample_gaussian(f, a).values == sample_gaussian(f, b).values);
    CHECK(sample_gaussian(f, a).values != sample_gaussian(f, c).values);
}
