#include "oracles.hpp"
#include "support.hpp"

#include "msinfer/maxstable.hpp"
#include "msinfer/parallel.hpp"

#include <cmath>

using namespace msinfer;

namespace {

const MaxStableModel kBr{Family::BrownResnick, {1.0, 1.0}};
const MaxStableModel kSch{Family::Schlather, {1.5, 1.05}};

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

// Relative error with a floor so derivatives that vanish in the far tail
// (below finite-difference resolution) are compared absolutely.
double rel_floor(double a, double b, double scale) { return std::abs(a - b) / std::max(std::abs(b), 1e-7 * scale); }

}  // namespace

TEST_CASE("normal cdf against series") {
    for (double x = -8.0; x <= 8.0; x += 0.125) {
        const double ref = static_cast<double>(oracle::normal_cdf_series(x));
        CHECK_MESSAGE(std::abs(normal_cdf(x) - ref) < 1e-10, "x=" << x);
    }
    // Far tail: the log form tracks the continued fraction.
    CHECK(oracle::normal_cdf_tail(-6.0L) == doctest::Approx(static_cast<double>(oracle::normal_cdf_series(-6.0L))).epsilon(1e-6));
    for (double x : {-6.0, -10.0, -20.0, -29.0, -35.0}) {
        const double ref = std::log(static_cast<double>(oracle::normal_cdf_tail(x)));
        CHECK(log_normal_cdf(x) == doctest::Approx(ref).epsilon(1e-9));
    }
    CHECK(std::isfinite(log_normal_cdf(-60.0)));
    CHECK(log_normal_cdf(-60.0) < log_normal_cdf(-59.0));
}

TEST_CASE("extremal coefficient examples") {
    CHECK(extremal_coefficient(kBr, 0.0) == 1.0);
    CHECK(extremal_coefficient(kSch, 0.0) == 1.0);
    const double ref = 2.0 * static_cast<double>(oracle::normal_cdf_series(1.0L));
    CHECK(extremal_coefficient(kBr, 2.0) == doctest::Approx(ref).epsilon(1e-12));
    CHECK(extremal_coefficient(kBr, 2.0) == doctest::Approx(1.6827).epsilon(1e-4));
    CHECK(extremal_coefficient_from_rho(-1.0) == 2.0);
    for (double rho = 0.01; rho <= 1.0; rho += 0.01) CHECK(extremal_coefficient_from_rho(rho) < 1.0 + std::sqrt(0.5));
    CHECK(extremal_coefficient(kSch, 3.0) == doctest::Approx(1.0 + std::sqrt((1.0 - correlation(kSch.params, 3.0)) / 2)));
}

TEST_CASE("extremal coefficient is monotone in distance") {
    for (const auto& m : {kBr, kSch, MaxStableModel{Family::BrownResnick, {0.3, 1.9}},
                          MaxStableModel{Family::Schlather, {2.5, 0.5}}}) {
        double prev = extremal_coefficient(m, 0.0);
        for (int i = 1; i <= 50; ++i) {
            const double t = extremal_coefficient(m, 0.2 * i);
            CHECK(t >= prev);
            CHECK(t <= 2.0);
            prev = t;
        }
    }
}

TEST_CASE("exponent function limits") {
    CHECK(exponent_V(kBr, 1.0, 1.0, 1e6) == doctest::Approx(2.0).epsilon(1e-12));
    const MaxStableModel far{Family::Schlather, {1e-3, 1.0}};
    CHECK(exponent_V(far, 1.0, 1.0, 50.0) == doctest::Approx(1.0 + std::sqrt(0.5)).epsilon(1e-12));
    for (double z : {0.3, 1.0, 7.0}) CHECK(exponent_V(kBr, z, z, 0.0) == doctest::Approx(1.0 / z));
    CHECK_THROWS_KIND(exponent_V(kBr, 0.0, 1.0, 1.0), ErrorKind::InvalidArgument);
    CHECK_THROWS_KIND(exponent_V(kSch, 1.0, -1.0, 1.0), ErrorKind::InvalidArgument);
}

TEST_CASE("exponent function homogeneity and theta") {
    for (const auto& m : {kBr, kSch}) {
        for (double h : {0.5, 1.7, 4.0}) {
            CHECK(exponent_V(m, 3.7 * 0.8, 3.7 * 2.5, h) == doctest::Approx(exponent_V(m, 0.8, 2.5, h) / 3.7).epsilon(1e-13));
            CHECK(exponent_V(m, 1.0, 1.0, h) == doctest::Approx(extremal_coefficient(m, h)).epsilon(1e-13));
        }
    }
}

TEST_CASE("closed forms agree with expectation quadrature") {
    const double probes[][2] = {{1.0, 1.0}, {0.5, 2.0}, {3.0, 0.7}, {0.2, 0.25}};
    for (double h : {0.4, 1.5, 3.0}) {
        const double a = std::sqrt(2.0 * semivariogram(kBr.params, h));
        const double rho = correlation(kSch.params, h);
        for (const auto& z : probes) {
            CHECK_MESSAGE(rel(exponent_V(kBr, z[0], z[1], h), oracle::br_V(a, z[0], z[1])) < 1e-8,
                          "br h=" << h << " z=" << z[0] << "," << z[1]);
            CHECK_MESSAGE(rel(exponent_V(kSch, z[0], z[1], h), oracle::schlather_V(rho, z[0], z[1])) < 1e-4,
                          "schlather h=" << h << " z=" << z[0] << "," << z[1]);
        }
    }
}

TEST_CASE("analytic derivatives match finite differences") {
    const double probes[][2] = {{1.0, 1.0}, {0.5, 2.0}, {3.0, 0.7}, {0.2, 0.25}, {10.0, 0.4}};
    for (const auto& m : {kBr, kSch, MaxStableModel{Family::BrownResnick, {2.0, 1.8}},
                          MaxStableModel{Family::Schlather, {0.6, 0.7}}}) {
        for (double h : {0.5, 2.0}) {
            for (const auto& z : probes) {
                const double z1 = z[0], z2 = z[1];
                const auto d = exponent_derivatives(m, z1, z2, h);
                const double e1 = 1e-6 * z1, e2 = 1e-6 * z2;
                auto V = [&](double a, double b) { return exponent_V(m, a, b, h); };
                const double fd1 = (V(z1 + e1, z2) - V(z1 - e1, z2)) / (2 * e1);
                const double fd2 = (V(z1, z2 + e2) - V(z1, z2 - e2)) / (2 * e2);
                // Mixed partial from differences of the analytic first derivative.
                const double fd12 = (exponent_derivatives(m, z1, z2 + e2, h).v1 -
                                     exponent_derivatives(m, z1, z2 - e2, h).v1) / (2 * e2);
                CHECK(d.v == doctest::Approx(V(z1, z2)).epsilon(1e-13));
                CHECK_MESSAGE(rel_floor(d.v1, fd1, d.v / z1) < 1e-4, "V1 " << d.v1 << " fd " << fd1);
                CHECK_MESSAGE(rel_floor(d.v2, fd2, d.v / z2) < 1e-4, "V2 " << d.v2 << " fd " << fd2);
                CHECK_MESSAGE(rel_floor(d.v12, fd12, d.v / (z1 * z2)) < 1e-4, "V12 " << d.v12 << " fd " << fd12);
                CHECK(d.v1 <= 0.0);
                CHECK(d.v1 * d.v2 - d.v12 > 0.0);
            }
        }
    }
}

TEST_CASE("pair density integrates to box probabilities") {
    for (const auto& m : {kBr, kSch}) {
        const double h = 1.3;
        auto F = [&](double a, double b) { return std::exp(-exponent_V(m, a, b, h)); };
        const double a1 = 0.9, b1 = 1.6, a2 = 0.5, b2 = 1.4;
        const double box = F(b1, b2) - F(a1, b2) - F(b1, a2) + F(a1, a2);
        auto row = [&](double x) {
            return oracle::simpson([&](double y) { return std::exp(log_pair_density(m, x, y, h)); }, a2, b2, 400);
        };
        const double integral = oracle::simpson(row, a1, b1, 400);
        CHECK(integral == doctest::Approx(box).epsilon(1e-7));
    }
}

TEST_CASE("log pair density is stable in the tails") {
    for (double z1 : {1e-3, 1.0, 1e4})
        for (double z2 : {1e-3, 1.0, 1e4}) {
            CHECK(std::isfinite(log_pair_density(kBr, z1, z2, 0.05)));
            CHECK(std::isfinite(log_pair_density(kBr, z1, z2, 30.0)));
        }
    const auto d = exponent_derivatives(kBr, 2.0, 0.5, 1.0);
    CHECK(log_pair_density(kBr, 2.0, 0.5, 1.0) == doctest::Approx(std::log(d.v1 * d.v2 - d.v12) - d.v).epsilon(1e-13));
}

TEST_CASE("simulation is reproducible and positive") {
    const Grid g(8, 8, 6, 6);
    for (const auto& m : {kSch, kBr}) {
        const MaxStableSimulator sim(m, g, TruncationPolicy::defaults_for(m.family, g));
        RngStream a(123), b(123);
        const auto s1 = sim.simulate(a);
        const auto s2 = sim.simulate(b);
        CHECK(s1 == s2);
        CHECK(s1.model == m.family);
        CHECK(s1.params == m.params);
        CHECK(s1.seed == std::uint64_t{123});
        CHECK_FALSE(s1.truncated);
        for (double v : s1.values) {
            CHECK(v > 0.0);
            CHECK(std::isfinite(v));
        }
        RngStream c(124);
        CHECK(sim.simulate(c).values != s1.values);
    }
}

TEST_CASE("cap above the stopping point does not change the field") {
    const Grid g(6, 6, 5, 5);
    for (const auto& m : {kSch, kBr}) {
        auto trunc = TruncationPolicy::defaults_for(m.family, g);
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            trunc.max_poisson_points = 1000;
            RngStream a(seed);
            SimulationInfo info;
            const auto s1 = MaxStableSimulator(m, g, trunc).simulate(a, &info);
            REQUIRE_FALSE(info.truncated);
            trunc.max_poisson_points = 10000;
            RngStream b(seed);
            CHECK(MaxStableSimulator(m, g, trunc).simulate(b).values == s1.values);
        }
    }
}

TEST_CASE("hitting the cap flags the sample") {
    const Grid g(6, 6, 5, 5);
    TruncationPolicy trunc{3.5, 2};
    RngStream r(1);
    SimulationInfo info;
    const auto s = MaxStableSimulator(kSch, g, trunc).simulate(r, &info);
    CHECK(info.truncated);
    CHECK(info.poisson_points == 2);
    CHECK(s.truncated);
}

TEST_CASE("unit Frechet margins") {
    const Grid g(5, 5, 4, 4);
    for (const auto& m : {kSch, kBr}) {
        const MaxStableSimulator sim(m, g, TruncationPolicy::defaults_for(m.family, g));
        const auto fields = simulate_replicates(sim, 4000, 31);
        for (std::size_t site : {std::size_t{0}, std::size_t{12}, std::size_t{24}}) {
            int below = 0;
            for (const auto& f : fields) below += f.values[site] <= 1.0;
            const double p = below / 4000.0;
            CHECK_MESSAGE(p >= 0.355, to_string(m.family) << " site " << site << " p=" << p);
            CHECK_MESSAGE(p <= 0.381, to_string(m.family) << " site " << site << " p=" << p);
        }
    }
}

TEST_CASE("max-stability of pointwise maxima") {
    const Grid g(4, 4, 3, 3);
    for (const auto& m : {kSch, kBr}) {
        const MaxStableSimulator sim(m, g, TruncationPolicy::defaults_for(m.family, g));
        const auto fields = simulate_replicates(sim, 20000, 8);
        for (std::size_t site : {std::size_t{0}, std::size_t{10}}) {
            std::vector<double> maxima(2000);
            for (std::size_t r = 0; r < 2000; ++r) {
                double mx = 0.0;
                for (std::size_t k = 0; k < 10; ++k) mx = std::max(mx, fields[r * 10 + k].values[site]);
                maxima[r] = mx / 10.0;
            }
            const double ks = oracle::ks_distance(maxima, [](double z) { return std::exp(-1.0 / z); });
            CHECK_MESSAGE(ks < 0.05, to_string(m.family) << " ks=" << ks);
        }
    }
}

TEST_CASE("bivariate CDF matches exp(-V)") {
    const Grid g(2, 2, 1.5, 1.5);
    for (const auto& m : {kSch, kBr}) {
        const MaxStableSimulator sim(m, g, TruncationPolicy::defaults_for(m.family, g));
        const auto fields = simulate_replicates(sim, 5000, 77);
        const double h = g.distance(0, 1);
        for (double z1 : {0.5, 1.0, 3.0})
            for (double z2 : {0.7, 2.0}) {
                int n = 0;
                for (const auto& f : fields) n += f.values[0] <= z1 && f.values[1] <= z2;
                const double emp = n / 5000.0;
                CHECK_MESSAGE(std::abs(emp - std::exp(-exponent_V(m, z1, z2, h))) < 0.03,
                              to_string(m.family) << " z=" << z1 << "," << z2 << " emp " << emp);
            }
    }
}

TEST_CASE("replicates are independent of thread count") {
    const Grid g(5, 5, 4, 4);
    const MaxStableSimulator sim(kBr, g, TruncationPolicy::defaults_for(Family::BrownResnick, g));
    set_max_threads(1);
    const auto a = simulate_replicates(sim, 12, 5, 3);
    set_max_threads(4);
    const auto b = simulate_replicates(sim, 12, 5, 3);
    set_max_threads(1);
    CHECK(a == b);
    RngStream r(replicate_seed(5, 3, 7));
    CHECK(sim.simulate(r) == a[7]);
    CHECK(a[7].seed == replicate_seed(5, 3, 7));
}
