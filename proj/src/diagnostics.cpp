#include "msinfer/diagnostics.hpp"

#include "msinfer/error.hpp"
#include "msinfer/parallel.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

namespace msinfer {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Fixed-point resolution for madogram sums.
constexpr double kFixedScale = 1152921504606846976.0;  // 2^60

const char* scale_name(ScoreScale s) { return s == ScoreScale::Original ? "original" : "transformed"; }

const char* statistic_name(FieldStatistic s) {
    switch (s) {
        case FieldStatistic::Min: return "min";
        case FieldStatistic::Mean: return "mean";
        case FieldStatistic::Max: return "max";
    }
    return "?";
}

double transformed(const std::string& parameter, double v) {
    if (parameter == "lambda") return std::log(v);
    const double nu = std::clamp(v, 1e-9, 2.0 - 1e-9);
    return std::log(nu / (2.0 - nu));
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
    out << std::setprecision(17);
    return out;
}

std::string csv_text(std::string s) {
    std::replace(s.begin(), s.end(), ',', ';');
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

}  // namespace

void ScenarioGrid::validate() const {
    require(!scenarios.empty(), "scenario grid is empty");
    require(replicates >= 1, "need at least one replicate per scenario");
    for (const auto& p : scenarios) (void)DependenceParams::checked(p.lambda, p.nu);
}

ScenarioGrid ScenarioGrid::product(Family family, const std::vector<double>& lambdas, const std::vector<double>& nus,
                                   std::size_t replicates) {
    ScenarioGrid g{family, {}, replicates};
    for (double l : lambdas)
        for (double n : nus) g.scenarios.push_back({l, n});
    g.validate();
    return g;
}

ScenarioGrid ScenarioGrid::standard(Family family, std::size_t replicates) {
    const std::vector<double> nus{0.8, 1.05, 1.3, 1.55};
    if (family == Family::BrownResnick) return product(family, {0.5, 0.75, 1.0, 1.5}, nus, replicates);
    return product(family, {0.5, 1.5, 2.0, 2.5}, nus, replicates);
}

ScenarioGrid ScenarioGrid::corners(Family family, std::size_t replicates) {
    const double lam_hi = family == Family::BrownResnick ? 1.5 : 2.5;
    return product(family, {0.5, lam_hi}, {0.8, 1.55}, replicates);
}

json to_json(const ScenarioGrid& g) {
    json sc = json::array();
    for (const auto& p : g.scenarios) sc.push_back({p.lambda, p.nu});
    return {{"family", std::string(to_string(g.family))}, {"replicates", g.replicates}, {"scenarios", sc}};
}

ScenarioGrid scenario_grid_from_json(const json& j) {
    ScenarioGrid g;
    try {
        g.family = parse_family(j.at("family").get<std::string>());
        g.replicates = j.value("replicates", g.replicates);
        if (j.contains("scenarios")) {
            for (const auto& s : j["scenarios"]) g.scenarios.push_back({s.at(0).get<double>(), s.at(1).get<double>()});
        } else {
            g.scenarios = ScenarioGrid::product(g.family, j.at("lambdas").get<std::vector<double>>(),
                                  j.at("nus").get<std::vector<double>>(), g.replicates)
                              .scenarios;
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::Schema, std::string("malformed scenario grid: ") + e.what());
    }
    g.validate();
    return g;
}

const ScoreCell& BenchmarkResult::cell(const std::string& method, const std::string& parameter,
                                       ScoreScale scale) const {
    for (const auto& c : scores)
        if (c.method == method && c.parameter == parameter && c.scale == scale) return c;
    fail(ErrorKind::InvalidArgument, "no score for " + method + "/" + parameter);
}

std::vector<ScoreCell> score_estimates(const std::vector<RawEstimate>& raw, const std::vector<std::string>& methods) {
    std::vector<ScoreCell> cells;
    for (const auto& m : methods) {
        for (const ScoreScale scale : {ScoreScale::Original, ScoreScale::Transformed}) {
            for (const std::string param : {"lambda", "nu"}) {
                ScoreCell c{m, param, scale};
                std::vector<double> err;
                for (const auto& r : raw) {
                    if (r.method != m) continue;
                    if (!r.ok) {
                        ++c.failures;
                        continue;
                    }
                    double est = param == "lambda" ? r.estimate.lambda : r.estimate.nu;
                    double truth = param == "lambda" ? r.truth.lambda : r.truth.nu;
                    if (scale == ScoreScale::Transformed) {
                        est = transformed(param, est);
                        truth = transformed(param, truth);
                    }
                    err.push_back(est - truth);
                }
                c.n = err.size();
                if (!err.empty()) {
                    double se = 0.0, ae = 0.0, sum = 0.0;
                    for (double e : err) {
                        se += e * e;
                        ae += std::abs(e);
                        sum += e;
                    }
                    const double n = static_cast<double>(err.size());
                    c.bias = sum / n;
                    c.rmse = std::sqrt(se / n);
                    c.mae = ae / n;
                    double var = 0.0;
                    for (double e : err) var += (e - c.bias) * (e - c.bias);
                    c.error_variance = var / n;
                } else {
                    c.rmse = c.mae = c.bias = c.error_variance = std::numeric_limits<double>::quiet_NaN();
                }
                cells.push_back(c);
            }
        }
    }
    return cells;
}

BenchmarkResult run_benchmark(const ScenarioGrid& scenarios, const std::vector<NamedEstimator>& estimators,
                              const Grid& grid, const TruncationPolicy& trunc, std::uint64_t seed) {
    scenarios.validate();
    require(!estimators.empty(), "no estimators to benchmark");
    BenchmarkResult result;
    result.seconds.assign(estimators.size(), 0.0);
    for (std::size_t k = 0; k < scenarios.scenarios.size(); ++k) {
        const DependenceParams truth = scenarios.scenarios[k];
        const MaxStableSimulator sim({scenarios.family, truth}, grid, trunc);
        const auto fields = simulate_replicates(sim, scenarios.replicates, seed, k);
        for (std::size_t e = 0; e < estimators.size(); ++e) {
            const auto t0 = std::chrono::steady_clock::now();
            std::vector<EstimateOutcome> out;
            try {
                out = estimators[e].run(fields, truth);
            } catch (const Error& err) {
                out.assign(fields.size(), EstimateOutcome{truth, false, err.what()});
            }
            result.seconds[e] += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            require(out.size() == fields.size(), "estimator " + estimators[e].name + " returned the wrong count");
            for (std::size_t r = 0; r < fields.size(); ++r) {
                bool ok = out[r].ok && out[r].params.valid() && std::isfinite(out[r].params.lambda);
                std::string msg = out[r].message;
                if (out[r].ok && !ok) msg = "estimate outside the parameter space";
                result.raw.push_back({estimators[e].name, k, r, truth, out[r].params, ok, msg});
            }
        }
    }
    std::vector<std::string> names;
    for (const auto& e : estimators) names.push_back(e.name);
    result.scores = score_estimates(result.raw, names);
    return result;
}

void write_benchmark(const BenchmarkResult& result, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());

    auto scores = open_out(dir / "scores.csv");
    scores << "method,parameter,scale,rmse,mae,bias,error_variance,n,failures\n";
    for (const auto& c : result.scores)
        scores << c.method << ',' << c.parameter << ',' << scale_name(c.scale) << ',' << c.rmse << ',' << c.mae << ','
               << c.bias << ',' << c.error_variance << ',' << c.n << ',' << c.failures << '\n';

    auto raw = open_out(dir / "raw_estimates.csv");
    raw << "method,scenario,replicate,lambda,nu,lambda_hat,nu_hat,ok\n";
    for (const auto& r : result.raw)
        raw << r.method << ',' << r.scenario << ',' << r.replicate << ',' << r.truth.lambda << ',' << r.truth.nu << ','
            << r.estimate.lambda << ',' << r.estimate.nu << ',' << (r.ok ? 1 : 0) << '\n';

    auto failures = open_out(dir / "failures.csv");
    failures << "method,scenario,replicate,lambda,nu,message\n";
    for (const auto& r : result.raw)
        if (!r.ok)
            failures << r.method << ',' << r.scenario << ',' << r.replicate << ',' << r.truth.lambda << ','
                     << r.truth.nu << ',' << csv_text(r.message) << '\n';

    std::vector<std::string> methods;
    for (const auto& r : result.raw)
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    json timing = json::object();
    for (std::size_t e = 0; e < result.seconds.size() && e < methods.size(); ++e) timing[methods[e]] = result.seconds[e];
    auto t = open_out(dir / "timing.json");
    t << timing.dump(2) << '\n';
    if (!scores || !raw || !failures || !t) fail(ErrorKind::Io, "write failed under " + dir.string());
}

double theta_from_madogram(double v) noexcept { return v >= 0.5 ? kInf : (1.0 + 2.0 * v) / (1.0 - 2.0 * v); }

double madogram_from_theta(double theta) noexcept { return 0.5 * (theta - 1.0) / (theta + 1.0); }

std::vector<MadogramBin> f_madogram(const std::vector<FieldSample>& samples, std::size_t n_bins,
                                    std::optional<double> max_distance) {
    require(samples.size() >= 2, "madogram needs at least 2 samples");
    require(n_bins >= 1, "madogram needs at least one bin");
    const Grid& g = samples.front().grid;
    const std::size_t D = g.size();
    for (const auto& s : samples) {
        require(s.grid == g, "madogram samples must share one grid");
        for (double v : s.values) require(v > 0.0 && std::isfinite(v), "madogram needs positive Frechet-scale values");
    }

    struct Pair {
        std::uint32_t a, b;
        double h;
    };
    std::vector<Pair> pairs;
    double h_min = kInf, h_max = 0.0;
    for (std::size_t a = 0; a < D; ++a)
        for (std::size_t b = a + 1; b < D; ++b) {
            const double h = g.distance(a, b);
            if (!(h > 0.0) || (max_distance && h > *max_distance * (1.0 + 1e-12))) continue;
            pairs.push_back({static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), h});
            h_min = std::min(h_min, h);
            h_max = std::max(h_max, h);
        }
    require(!pairs.empty(), "no site pairs within the distance cutoff");

    const double width = h_max > h_min ? (h_max - h_min) / static_cast<double>(n_bins) : 1.0;
    const auto bin_of = [&](double h) {
        const auto k = static_cast<std::size_t>((h - h_min) / width);
        return std::min(k, n_bins - 1);
    };

    // F(z) per sample and site, site-major so one pair scans contiguous memory.
    const std::size_t N = samples.size();
    std::vector<double> F(D * N);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t s = 0; s < D; ++s) F[s * N + i] = std::exp(-1.0 / samples[i].values[s]);

    std::vector<unsigned __int128> sums(n_bins, 0);
    std::vector<double> h_sums(n_bins, 0.0);
    std::vector<std::size_t> counts(n_bins, 0);
    for (const auto& p : pairs) {
        const std::size_t k = bin_of(p.h);
        const double* fa = &F[p.a * N];
        const double* fb = &F[p.b * N];
        unsigned __int128 acc = 0;
        for (std::size_t i = 0; i < N; ++i)
            acc += static_cast<std::uint64_t>(std::llround(std::abs(fa[i] - fb[i]) * kFixedScale));
        sums[k] += acc;
        counts[k] += 1;
    }
    // Pair distances summed in a canonical (sorted) order per bin.
    std::vector<std::vector<double>> hs(n_bins);
    for (const auto& p : pairs) hs[bin_of(p.h)].push_back(p.h);

    std::vector<MadogramBin> bins(n_bins);
    for (std::size_t k = 0; k < n_bins; ++k) {
        auto& b = bins[k];
        b.h_lo = h_min + width * static_cast<double>(k);
        b.h_hi = k + 1 == n_bins ? h_max : h_min + width * static_cast<double>(k + 1);
        b.h_center = 0.5 * (b.h_lo + b.h_hi);
        b.n_pairs = counts[k];
        if (counts[k] == 0) continue;
        std::sort(hs[k].begin(), hs[k].end());
        double hsum = 0.0;
        for (double h : hs[k]) hsum += h;
        b.h_mean = hsum / static_cast<double>(counts[k]);
        const double mean_abs = static_cast<double>(sums[k]) / kFixedScale / static_cast<double>(counts[k] * N);
        b.v_f = 0.5 * mean_abs;
        b.theta = theta_from_madogram(b.v_f);
        b.valid = b.v_f < 0.5;
    }
    return bins;
}

std::vector<MadogramBin> model_madogram(Family family, const std::vector<DependenceParams>& params,
                                        const std::vector<MadogramBin>& bins) {
    require(!params.empty(), "no fitted parameters");
    std::vector<MadogramBin> out = bins;
    for (auto& b : out) {
        if (b.n_pairs == 0) continue;
        double v = 0.0;
        for (const auto& p : params) v += madogram_from_theta(extremal_coefficient({family, p}, b.h_mean));
        b.v_f = v / static_cast<double>(params.size());
        b.theta = theta_from_madogram(b.v_f);
        b.valid = b.v_f < 0.5;
    }
    return out;
}

double madogram_mad(const std::vector<MadogramBin>& a, const std::vector<MadogramBin>& b) {
    require(a.size() == b.size(), "madogram curves have different bin counts");
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (!a[k].valid || !b[k].valid || a[k].n_pairs == 0 || b[k].n_pairs == 0) continue;
        total += std::abs(a[k].theta - b[k].theta);
        ++n;
    }
    require(n > 0, "madogram curves share no valid bins");
    return total / static_cast<double>(n);
}

void write_madogram_csv(const fs::path& path, const std::vector<MadogramBin>& bins) {
    auto out = open_out(path);
    out << "bin,h_lo,h_hi,h_center,h_mean,n_pairs,v_f,theta,valid\n";
    for (std::size_t k = 0; k < bins.size(); ++k) {
        const auto& b = bins[k];
        out << k << ',' << b.h_lo << ',' << b.h_hi << ',' << b.h_center << ',' << b.h_mean << ',' << b.n_pairs << ','
            << b.v_f << ',';
        if (b.valid)
            out << b.theta;
        else
            out << "inf";
        out << ',' << (b.valid ? 1 : 0) << '\n';
    }
    if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

double empirical_quantile(std::vector<double> v, double p) {
    require(!v.empty(), "quantile of an empty sample");
    require(p >= 0.0 && p <= 1.0, "quantile level must lie in [0, 1]");
    std::sort(v.begin(), v.end());
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<QQRow> qq_summaries(const std::vector<FieldSample>& observed, const std::vector<DependenceParams>& fitted,
                                Family family, std::size_t n_sim, const TruncationPolicy& trunc, std::uint64_t seed) {
    require(!observed.empty(), "no observed fields");
    require(fitted.size() == observed.size(), "need one fitted parameter pair per observed field");
    require(n_sim >= 1, "n_sim must be at least 1");
    const std::size_t N = observed.size();

    const auto stats = [](const std::vector<double>& v) {
        double lo = kInf, hi = -kInf, sum = 0.0;
        for (double x : v) {
            require(x > 0.0 && std::isfinite(x), "qq summaries need positive Frechet-scale values");
            lo = std::min(lo, x);
            hi = std::max(hi, x);
            sum += x;
        }
        return std::array<double, 3>{lo, sum / static_cast<double>(v.size()), hi};
    };

    std::vector<std::array<double, 3>> obs(N);
    for (std::size_t i = 0; i < N; ++i) obs[i] = stats(observed[i].values);

    // sim[i][r] = statistics of replicate r simulated at field i's estimate.
    std::vector<std::vector<std::array<double, 3>>> sim(N);
    for (std::size_t i = 0; i < N; ++i) {
        const MaxStableSimulator s({family, fitted[i]}, observed[i].grid, trunc);
        const auto reps = simulate_replicates(s, n_sim, seed, i);
        for (const auto& f : reps) sim[i].push_back(stats(f.values));
    }

    std::vector<QQRow> rows;
    for (const auto st : {FieldStatistic::Min, FieldStatistic::Mean, FieldStatistic::Max}) {
        const auto c = static_cast<std::size_t>(st);
        std::vector<double> ov(N);
        for (std::size_t i = 0; i < N; ++i) ov[i] = obs[i][c];
        std::vector<std::vector<double>> per_rep(n_sim, std::vector<double>(N));
        for (std::size_t r = 0; r < n_sim; ++r)
            for (std::size_t i = 0; i < N; ++i) per_rep[r][i] = sim[i][r][c];
        for (int pct = 1; pct <= 99; ++pct) {
            const double p = pct / 100.0;
            std::vector<double> q(n_sim);
            for (std::size_t r = 0; r < n_sim; ++r) q[r] = empirical_quantile(per_rep[r], p);
            rows.push_back({st, p, empirical_quantile(ov, p), empirical_quantile(q, 0.5), empirical_quantile(q, 0.025),
                            empirical_quantile(q, 0.975)});
        }
    }
    return rows;
}

void write_qq_csv(const fs::path& path, const std::vector<QQRow>& rows) {
    auto out = open_out(path);
    out << "statistic,probability,observed,sim_median,sim_lo,sim_hi\n";
    for (const auto& r : rows)
        out << statistic_name(r.statistic) << ',' << r.probability << ',' << r.observed << ',' << r.sim_median << ','
            << r.sim_lo << ',' << r.sim_hi << '\n';
    if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

}  // namespace msinfer
