#include "msinfer/pairwise.hpp"

#include "msinfer/error.hpp"
#include "msinfer/maxstable.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace msinfer {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
const double kLogSqrt2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

// Terms are summed in 2^-50 fixed point so the total does not depend on pair order.
constexpr double kFixedScale = 1125899906842624.0;  // 2^50
constexpr double kMaxTerm = 1e15;

}  // namespace

PairSet PairSet::build(const Grid& grid, double delta) {
    require(delta > 0.0, "pair cutoff must be positive");
    PairSet set;
    set.delta = delta;
    const double limit = delta * (1.0 + 1e-12);
    const auto n = static_cast<std::uint32_t>(grid.size());
    for (std::uint32_t a = 0; a < n; ++a) {
        for (std::uint32_t b = a + 1; b < n; ++b) {
            const double h = grid.distance(a, b);
            if (!(h > 0.0 && h <= limit)) continue;
            auto it = std::find(set.distances.begin(), set.distances.end(), h);
            std::uint32_t cls = 0;
            if (it == set.distances.end()) {
                cls = static_cast<std::uint32_t>(set.distances.size());
                set.distances.push_back(h);
            } else {
                cls = static_cast<std::uint32_t>(it - set.distances.begin());
            }
            set.pairs.push_back({a, b, cls});
        }
    }
    return set;
}

void PLConfig::validate() const {
    require(delta > 0.0, "PL cutoff must be positive");
    require(n_random_starts >= 1 && n_refined >= 1 && n_refined <= n_random_starts,
            "PL needs 1 <= n_refined <= n_random_starts");
    require(lambda_bounds.first > 0.0 && lambda_bounds.first < lambda_bounds.second, "invalid lambda bounds");
    require(nu_bounds.first > 0.0 && nu_bounds.first < nu_bounds.second && nu_bounds.second <= 2.0,
            "invalid nu bounds");
}

double pl_objective(const FieldSample& sample, Family family, const DependenceParams& params, const PairSet& pairs) {
    if (!params.valid()) return -kInf;
    const std::vector<double>& z = sample.values;
    const std::size_t nd = pairs.distances.size();
    std::vector<double> per_distance(nd);
    for (std::size_t k = 0; k < nd; ++k) {
        per_distance[k] = family == Family::BrownResnick ? std::sqrt(2.0 * semivariogram(params, pairs.distances[k]))
                                                         : correlation(params, pairs.distances[k]);
    }

    __int128 total = 0;
    for (const auto& p : pairs.pairs) {
        const double z1 = z[p.first];
        double z2 = z[p.second];
        if (!(z1 > 0.0) || !(z2 > 0.0)) return -kInf;
        if (z1 == z2) z2 += 1e-12 * z2;

        double term;
        if (family == Family::BrownResnick) {
            const double a = per_distance[p.distance_class];
            if (!(a > 0.0) || !std::isfinite(a)) return -kInf;
            const double lz1 = std::log(z1);
            const double lz2 = std::log(z2);
            const double r = (lz2 - lz1) / a;
            const double w = 0.5 * a + r;
            const double v = 0.5 * a - r;
            const double cw = normal_cdf(w);
            const double cv = normal_cdf(v);
            const double log_a = (cw > 0.0 ? std::log(cw) : log_normal_cdf(w)) +
                                 (cv > 0.0 ? std::log(cv) : log_normal_cdf(v)) - 2.0 * (lz1 + lz2);
            const double log_b = -0.5 * w * w - kLogSqrt2Pi - std::log(a) - 2.0 * lz1 - lz2;
            const double hi = std::max(log_a, log_b);
            term = hi + std::log1p(std::exp(-std::abs(log_a - log_b))) - (cw / z1 + cv / z2);
        } else {
            const double rho = per_distance[p.distance_class];
            const double c = std::sqrt(z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2);
            const double v = (z1 + z2 + c) / (2.0 * z1 * z2);
            const double v1 = -(1.0 + (z2 - rho * z1) / c) / (2.0 * z1 * z1);
            const double v2 = -(1.0 + (z1 - rho * z2) / c) / (2.0 * z2 * z2);
            const double v12 = -(1.0 - rho * rho) / (2.0 * c * c * c);
            const double q = v1 * v2 - v12;
            if (!(q > 0.0) || !std::isfinite(q)) return -kInf;
            term = std::log(q) - v;
        }
        if (!std::isfinite(term) || std::abs(term) > kMaxTerm) return -kInf;
        total += static_cast<__int128>(term * kFixedScale);
    }
    return static_cast<double>(total) / kFixedScale;
}

nlohmann::json to_json(const FitReport& r) {
    nlohmann::json starts = nlohmann::json::array();
    for (const auto& s : r.starts) starts.push_back({{"lambda", s.params.lambda}, {"nu", s.params.nu}, {"objective", s.objective}});
    return {{"family", std::string(to_string(r.family))},
            {"lambda", r.estimate.lambda},
            {"nu", r.estimate.nu},
            {"objective", r.objective},
            {"converged", r.converged},
            {"iterations", r.iterations},
            {"evaluations", r.evaluations},
            {"seconds", r.seconds},
            {"message", r.message},
            {"starts", std::move(starts)}};
}

FitReport fit_report_from_json(const nlohmann::json& j) {
    FitReport r;
    try {
        r.family = parse_family(j.at("family").get<std::string>());
        r.estimate = {j.at("lambda").get<double>(), j.at("nu").get<double>()};
        r.objective = j.at("objective").is_null() ? -kInf : j.at("objective").get<double>();
        r.converged = j.at("converged").get<bool>();
        r.iterations = j.value("iterations", 0);
        r.evaluations = j.value("evaluations", 0);
        r.seconds = j.value("seconds", 0.0);
        r.message = j.value("message", std::string());
        if (j.contains("starts"))
            for (const auto& s : j["starts"])
                r.starts.push_back({{s.at("lambda").get<double>(), s.at("nu").get<double>()},
                                    s.at("objective").is_null() ? -kInf : s.at("objective").get<double>()});
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Schema, std::string("malformed fit report: ") + e.what());
    }
    return r;
}

FitReport fit_pl(const FieldSample& sample, Family family, const PLConfig& config, const DependenceParams& init_center,
                 RngStream& rng) {
    config.validate();
    require(init_center.valid(), "PL initial center outside the parameter space");
    for (double v : sample.values) require(v > 0.0 && std::isfinite(v), "PL needs positive Frechet-scale data");

    const auto t0 = std::chrono::steady_clock::now();
    const PairSet pairs = PairSet::build(sample.grid, config.delta);
    const auto [lam_lo, lam_hi] = config.lambda_bounds;
    const auto [nu_lo, nu_hi] = config.nu_bounds;

    FitReport report;
    report.family = family;
    report.starts.reserve(config.n_random_starts);
    for (std::size_t k = 0; k < config.n_random_starts; ++k) {
        const double lam = init_center.lambda * rng.uniform(1.0 - config.lambda_spread, 1.0 + config.lambda_spread);
        const double nu = init_center.nu + rng.uniform(-config.nu_spread, config.nu_spread);
        const DependenceParams p{std::clamp(lam, lam_lo, lam_hi), std::clamp(nu, nu_lo, nu_hi)};
        report.starts.push_back({p, pl_objective(sample, family, p, pairs)});
    }

    std::vector<std::size_t> order(report.starts.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return report.starts[a].objective > report.starts[b].objective;
    });

    const Objective negated = [&](std::span<const double> x) {
        const double v = pl_objective(sample, family, {x[0], x[1]}, pairs);
        return std::isfinite(v) ? -v : kInf;
    };
    const BoxBounds box{{lam_lo, nu_lo}, {lam_hi, nu_hi}};

    bool have_best = false;
    for (std::size_t r = 0; r < config.n_refined; ++r) {
        const auto& start = report.starts[order[r]];
        if (!std::isfinite(start.objective)) continue;
        const auto res = minimize_box(negated, {start.params.lambda, start.params.nu}, box, config.optimizer);
        report.evaluations += res.evaluations;
        report.iterations += res.iterations;
        const double obj = -res.f;
        if (!have_best || obj > report.objective) {
            have_best = true;
            report.estimate = {res.x[0], res.x[1]};
            report.objective = obj;
            report.converged = res.converged;
            report.message = res.message;
        }
    }
    if (!have_best) {
        report.estimate = report.starts[order.front()].params;
        report.objective = -kInf;
        report.converged = false;
        report.message = "no random start had a finite pairwise likelihood";
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace msinfer
