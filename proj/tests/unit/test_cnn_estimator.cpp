#include "support.hpp"

#include "msinfer/cnn_estimator.hpp"
#include "msinfer/parallel.hpp"

#include <algorithm>
#include <cmath>

using namespace msinfer;

namespace {

Grid small_grid(std::size_t n) {
    const double e = 20.0 * static_cast<double>(n - 1) / 24.0;  // same spacing as 25x25 on [0, 20]
    return Grid(n, n, e, e);
}

FitReport report(double lambda, double nu, bool converged = true) {
    FitReport r;
    r.estimate = {lambda, nu};
    r.converged = converged;
    return r;
}

}  // namespace

TEST_CASE("output transform round trip") {
    for (double lam : {1e-3, 0.1, 1.0, 3.0, 250.0})
        for (double nu : {1e-3, 0.5, 1.0, 1.9, 1.999}) {
            const auto u = transform::forward({lam, nu});
            const auto back = transform::inverse(u[0], u[1]);
            CHECK(std::abs(back.lambda - lam) <= 1e-12 * lam);
            CHECK(std::abs(back.nu - nu) <= 1e-12);
        }
    const auto u = transform::forward({1.0, 1.0});
    CHECK(u[0] == 0.0);
    CHECK(u[1] == 0.0);
    CHECK_THROWS_KIND(transform::forward({1.0, 2.0}), ErrorKind::InvalidArgument);
    CHECK_THROWS_KIND(transform::input(0.0), ErrorKind::InvalidArgument);
    CHECK(transform::input(std::exp(2.0)) == doctest::Approx(2.0));
}

TEST_CASE("inverse transform stays in the open parameter space") {
    RngStream r(1);
    for (int i = 0; i < 1000; ++i) {
        const auto p = transform::inverse(r.normal() * std::pow(10.0, r.uniform(0.0, 3.5)),
                                          r.normal() * std::pow(10.0, r.uniform(0.0, 3.5)));
        CHECK(p.lambda > 0.0);
        CHECK(std::isfinite(p.lambda));
        CHECK(p.nu > 0.0);
        CHECK(p.nu < 2.0);
    }
    for (double u : {-1e308, -800.0, 800.0, 1e308}) {
        const auto p = transform::inverse(u, u);
        CHECK(p.lambda > 0.0);
        CHECK(std::isfinite(p.lambda));
        CHECK(p.nu > 0.0);
        CHECK(p.nu < 2.0);
    }
}

TEST_CASE("prior from pairwise fits") {
    SUBCASE("spread of three") {
        const auto p = prior_from_pl({report(1, 1.0), report(2, 1.1), report(3, 1.2)});
        CHECK(p.lambda_range.first == 1e-3);
        CHECK(p.lambda_range.second == doctest::Approx(6.0));
        CHECK(p.nu_range.first == doctest::Approx(1.0 - 0.3).epsilon(1e-12));
        CHECK(p.nu_range.second == doctest::Approx(1.2 + 0.3).epsilon(1e-12));
    }
    SUBCASE("upper nu clipped below 2") {
        const auto p = prior_from_pl({report(1, 1.8), report(1.5, 1.9)});
        CHECK(p.nu_range.second == doctest::Approx(1.999).epsilon(1e-15));
        CHECK(p.nu_range.first == doctest::Approx(1.8 - 3 * std::sqrt(0.005)).epsilon(1e-12));
    }
    SUBCASE("equal reports") {
        const auto p = prior_from_pl({report(1.2, 0.9), report(1.2, 0.9), report(1.2, 0.9)});
        CHECK(p.lambda_range.first == doctest::Approx(1.199));
        CHECK(p.lambda_range.second == doctest::Approx(1.201));
        CHECK(p.nu_range.first == doctest::Approx(0.899));
        CHECK(p.nu_range.second == doctest::Approx(0.901));
    }
    SUBCASE("only converged fits count") {
        CHECK_THROWS_KIND(prior_from_pl({report(1, 1), report(2, 1, false)}), ErrorKind::InsufficientData);
        CHECK_THROWS_KIND(prior_from_pl({}), ErrorKind::InsufficientData);
        const auto p = prior_from_pl({report(1, 1), report(1, 1), report(50, 0.1, false)});
        CHECK(p.lambda_range.second < 2.0);
    }
}

TEST_CASE("prior box validation and json") {
    PriorBox p;
    CHECK(prior_box_from_json(to_json(p)) == p);
    p.nu_range = {0.5, 2.2};
    CHECK_THROWS_KIND(p.validate(), ErrorKind::InvalidArgument);
    CHECK_THROWS_KIND(prior_box_from_json(nlohmann::json{{"lambda_range", {3.0, 1.0}}}), ErrorKind::InvalidArgument);
}

TEST_CASE("training set draws from the prior box") {
    const Grid g = small_grid(5);
    PriorBox prior;
    const auto ts = make_training_set(Family::BrownResnick, prior, g, TruncationPolicy::defaults_for(Family::BrownResnick, g), 17);
    REQUIRE(ts.bundle.samples.size() == 2000);
    CHECK_NOTHROW(ts.bundle.validate());
    double sum = 0.0, lo = 1e9, hi = -1e9;
    for (const auto& s : ts.bundle.samples) {
        sum += s.params->lambda;
        lo = std::min(lo, s.params->lambda);
        hi = std::max(hi, s.params->lambda);
        CHECK(s.params->nu >= 0.5);
        CHECK(s.params->nu <= 1.9);
    }
    CHECK(lo >= 0.1);
    CHECK(hi <= 3.0);
    CHECK(sum / 2000 >= 1.4);
    CHECK(sum / 2000 <= 1.7);
    CHECK(ts.outputs.rows() == 2000);
    CHECK(ts.outputs(7, 0) == std::log(ts.bundle.samples[7].params->lambda));
    CHECK(ts.bundle.meta.param_ranges->nu == prior.nu_range);
}

TEST_CASE("training set size one and determinism") {
    const Grid g = small_grid(5);
    PriorBox prior;
    prior.n_train = 1;
    const auto trunc = TruncationPolicy::defaults_for(Family::Schlather, g);
    const auto one = make_training_set(Family::Schlather, prior, g, trunc, 3);
    CHECK(one.bundle.samples.size() == 1);
    prior.n_train = 30;
    const auto a = make_training_set(Family::Schlather, prior, g, trunc, 3);
    set_max_threads(4);
    const auto b = make_training_set(Family::Schlather, prior, g, trunc, 3);
    set_max_threads(1);
    CHECK(a.bundle == b.bundle);
    CHECK(a.outputs == b.outputs);
    // sample 0 is a pure function of (seed, 0)
    CHECK(a.bundle.samples[0] == one.bundle.samples[0]);
}

TEST_CASE("grid mismatch is a shape error") {
    const Grid g = small_grid(5);
    PriorBox prior;
    prior.n_train = 4;
    const auto ts = make_training_set(Family::BrownResnick, prior, g, TruncationPolicy::defaults_for(Family::BrownResnick, g), 1);
    RngStream r(1);
    TrainConfig cfg;
    cfg.batch_size = 2;
    CHECK_THROWS_KIND(fit_estimator(ts.bundle, ts.outputs, NetworkSpec::table1(), cfg, r), ErrorKind::InvalidArgument);
}

TEST_CASE("default training configuration on a small grid") {
    const Grid g = small_grid(9);
    PriorBox prior;
    prior.n_train = 600;
    const auto ts = make_training_set(Family::BrownResnick, prior, g, TruncationPolicy::defaults_for(Family::BrownResnick, g), 5);
    RngStream r(6);
    const auto est = fit_estimator(ts.bundle, ts.outputs, NetworkSpec::table1(9, 9), TrainConfig{}, r);
    REQUIRE(est.net.loss_trace.size() == 32);
    for (double l : est.net.loss_trace) CHECK(std::isfinite(l));
    CHECK(est.net.loss_trace.back() < est.net.loss_trace.front());

    const auto fitted = estimate_all(est, ts.bundle.samples);
    std::vector<double> err;
    for (std::size_t k = 0; k < fitted.size(); ++k)
        err.push_back(std::abs(std::log(fitted[k].lambda) - std::log(ts.bundle.samples[k].params->lambda)));
    std::nth_element(err.begin(), err.begin() + 300, err.end());
    CHECK(err[300] < (std::log(3.0) - std::log(0.1)) / 4.0);

    for (const auto& p : fitted) {
        CHECK(p.lambda > 0.0);
        CHECK(p.nu > 0.0);
        CHECK(p.nu < 2.0);
    }
    FieldSample neg = ts.bundle.samples[0];
    neg.values[3] = -1.0;
    CHECK_THROWS_KIND(estimate(est, neg), ErrorKind::InvalidArgument);
}

TEST_CASE("trained estimator orders range estimates") {
    // Learning rate 0.001: the small-grid network learns reliably at this rate.
    const Grid g = small_grid(9);
    const auto trunc = TruncationPolicy::defaults_for(Family::BrownResnick, g);
    PriorBox prior;
    prior.n_train = 600;
    const auto ts = make_training_set(Family::BrownResnick, prior, g, trunc, 5);
    TrainConfig cfg;
    cfg.learning_rate = 0.001;
    RngStream r(6);
    const auto est = fit_estimator(ts.bundle, ts.outputs, NetworkSpec::table1(9, 9), cfg, r);
    double mean[2] = {0.0, 0.0};
    int i = 0;
    for (double lam : {0.5, 1.5}) {
        const MaxStableSimulator sim({Family::BrownResnick, {lam, 1.05}}, g, trunc);
        for (const auto& p : estimate_all(est, simulate_replicates(sim, 50, 77))) mean[i] += p.lambda / 50.0;
        ++i;
    }
    MESSAGE("mean lambda-hat at 0.5: " << mean[0] << ", at 1.5: " << mean[1]);
    CHECK(mean[0] < mean[1]);
}

TEST_CASE("estimator pipeline is a pure function of its seeds and survives save/load") {
    testing::TempDir dir("cnn");
    const Grid g = small_grid(7);
    const auto trunc = TruncationPolicy::defaults_for(Family::Schlather, g);
    PriorBox prior;
    prior.n_train = 40;
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 10;
    auto run = [&] {
        const auto ts = make_training_set(Family::Schlather, prior, g, trunc, 9);
        RngStream r(10);
        return fit_estimator(ts.bundle, ts.outputs, NetworkSpec::table1(7, 7), cfg, r);
    };
    const auto a = run();
    const auto b = run();
    CHECK(a.net.weights == b.net.weights);
    CHECK(a.family == Family::Schlather);
    CHECK(a.prior.n_train == 40);

    const MaxStableSimulator sim({Family::Schlather, {1.0, 1.0}}, g, trunc);
    const auto test = simulate_replicates(sim, 5, 1);
    save_estimator(a, dir.path / "est");
    const auto back = load_estimator(dir.path / "est");
    CHECK(back.family == a.family);
    CHECK(back.prior == a.prior);
    CHECK(back.train_config.learning_rate == a.train_config.learning_rate);
    const auto e1 = estimate_all(a, test);
    const auto e2 = estimate_all(back, test);
    CHECK(e1 == e2);
    CHECK(estimate(a, test[3]) == e1[3]);
    CHECK_THROWS_KIND(load_estimator(dir.path / "none"), ErrorKind::Io);
}
