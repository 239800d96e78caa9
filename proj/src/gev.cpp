#include "msinfer/gev.hpp"

#include "msinfer/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>

namespace msinfer {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kGumbel = 1e-6;
constexpr double kEulerGamma = 0.5772156649015329;

// log t, with t the Frechet-scale value; nullopt outside the support.
std::optional<double> log_reduced(double z, double mu, double sigma, double xi) {
    const double y = (z - mu) / sigma;
    if (xi == 0.0) return y;
    const double a = xi * y;
    if (!(a > -1.0)) return std::nullopt;
    return std::log1p(a) / xi;
}

}  // namespace

BlockExtremes block_minima(std::span<const double> series, std::size_t block_length, bool negate) {
    require(!series.empty(), "empty series");
    require(block_length >= 1, "block length must be at least 1");
    BlockExtremes out;
    const std::size_t n_full = series.size() / block_length;
    out.dropped = series.size() - n_full * block_length;
    out.values.reserve(n_full);
    for (std::size_t k = 0; k < n_full; ++k) {
        const auto block = series.subspan(k * block_length, block_length);
        const double lo = *std::min_element(block.begin(), block.end());
        out.values.push_back(negate ? -lo : lo);
    }
    return out;
}

double gev_cdf(double z, double mu, double sigma, double xi) {
    const auto lt = log_reduced(z, mu, sigma, xi);
    if (!lt) return xi > 0.0 ? 0.0 : 1.0;
    return std::exp(-std::exp(-*lt));
}

double gev_quantile(double p, double mu, double sigma, double xi) {
    require(p > 0.0 && p < 1.0, "quantile level must lie in (0, 1)");
    return from_frechet(-1.0 / std::log(p), GevParams{{mu}, sigma, xi}, 0);
}

double gev_log_density(double z, double mu, double sigma, double xi) {
    const double y = (z - mu) / sigma;
    if (std::abs(xi) < kGumbel) return -std::log(sigma) - y - std::exp(-y);
    const double a = xi * y;
    if (!(a > -1.0)) return -kInf;
    const double lt = std::log1p(a);
    return -std::log(sigma) - (1.0 + 1.0 / xi) * lt - std::exp(-lt / xi);
}

double gev_loglik(const BlockSeries& s, const GevParams& p) {
    require(p.mu.size() == s.n_blocks, "GEV location count does not match the block count");
    if (!(p.sigma > 0.0)) return -kInf;
    double total = 0.0;
    for (std::size_t y = 0; y < s.n_years; ++y)
        for (std::size_t b = 0; b < s.n_blocks; ++b) {
            const double v = gev_log_density(s.at(y, b), p.mu[b], p.sigma, p.xi);
            if (!std::isfinite(v)) return -kInf;
            total += v;
        }
    return total;
}

double to_frechet(double z, const GevParams& p, std::size_t block) {
    require(block < p.mu.size(), "block index out of range");
    const auto lt = log_reduced(z, p.mu[block], p.sigma, p.xi);
    if (!lt) {
        std::ostringstream msg;
        msg << "value " << z << " lies outside the GEV support of block " << block;
        fail(ErrorKind::InvalidArgument, msg.str());
    }
    return std::exp(*lt);
}

double from_frechet(double t, const GevParams& p, std::size_t block) {
    require(block < p.mu.size(), "block index out of range");
    require(t > 0.0, "Frechet value must be positive");
    const double lt = std::log(t);
    const double y = p.xi == 0.0 ? lt : std::expm1(p.xi * lt) / p.xi;
    return p.mu[block] + p.sigma * y;
}

GevFit fit_gev(const BlockSeries& s, const OptimizerOptions& options) {
    require(s.n_blocks >= 1, "need at least one block");
    require(s.values.size() == s.n_blocks * s.n_years, "block series size mismatch");
    if (s.n_years < 5)
        fail(ErrorKind::InsufficientData,
             "GEV fit needs at least 5 observations per block, got " + std::to_string(s.n_years));
    for (double v : s.values) require(std::isfinite(v), "non-finite block extreme");

    const std::size_t B = s.n_blocks;
    const std::size_t Y = s.n_years;
    std::vector<double> mean(B, 0.0);
    for (std::size_t y = 0; y < Y; ++y)
        for (std::size_t b = 0; b < B; ++b) mean[b] += s.at(y, b);
    for (double& m : mean) m /= static_cast<double>(Y);
    double ss = 0.0;
    for (std::size_t y = 0; y < Y; ++y)
        for (std::size_t b = 0; b < B; ++b) ss += (s.at(y, b) - mean[b]) * (s.at(y, b) - mean[b]);
    const double pooled_sd = std::sqrt(ss / static_cast<double>(B * (Y - 1)));

    // Standardize so the optimizer works on order-one values.
    double centre = 0.0;
    for (double m : mean) centre += m;
    centre /= static_cast<double>(B);
    const double scale = pooled_sd > 0.0 ? pooled_sd : 1.0;
    BlockSeries z = s;
    for (double& v : z.values) v = (v - centre) / scale;

    const auto unpack = [&](std::span<const double> x) {
        GevParams p;
        p.mu.assign(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(B));
        p.sigma = x[B];
        p.xi = x[B + 1];
        return p;
    };
    const Objective nll = [&](std::span<const double> x) {
        const double ll = gev_loglik(z, unpack(x));
        return std::isfinite(ll) ? -ll : kInf;
    };

    const double sigma0 = (pooled_sd > 0.0 ? pooled_sd / scale : 1.0) * std::sqrt(6.0) / std::numbers::pi;
    std::vector<double> x0(B + 2);
    for (std::size_t b = 0; b < B; ++b) x0[b] = (mean[b] - centre) / scale - kEulerGamma * sigma0;
    x0[B] = sigma0;
    x0[B + 1] = 0.1;
    if (!std::isfinite(nll(x0))) x0[B + 1] = 0.0;

    BoxBounds box{std::vector<double>(B + 2, -kInf), std::vector<double>(B + 2, kInf)};
    box.lower[B] = 1e-8;
    box.lower[B + 1] = -0.5;
    box.upper[B + 1] = 0.5;

    const auto res = minimize_box(nll, x0, box, options);

    const double log_scale = std::log(scale) * static_cast<double>(B * Y);
    const auto restore = [&](std::span<const double> x) {
        GevParams p = unpack(x);
        for (double& m : p.mu) m = centre + scale * m;
        p.sigma *= scale;
        return p;
    };
    GevFit fit;
    fit.params = restore(res.x);
    fit.loglik = -res.f - log_scale;
    fit.initial_loglik = -nll(x0) - log_scale;
    fit.converged = res.converged && std::isfinite(res.f);
    fit.message = res.message;
    if (!fit.converged) throw GevFitError("GEV fit did not converge: " + res.message, fit);
    return fit;
}

SiteFits fit_gev_sites(const DatasetBundle& series, std::size_t block_length, std::size_t n_blocks, bool negate) {
    series.validate();
    require(n_blocks >= 1, "need at least one block per year");
    const Grid& g = series.grid();
    const std::size_t T = series.samples.size();
    const std::size_t D = g.size();

    SiteFits out;
    out.n_blocks = n_blocks;
    const std::size_t n_ext = T / block_length;
    out.n_years = n_ext / n_blocks;
    if (out.n_years == 0)
        fail(ErrorKind::InsufficientData, "series too short for one year of " + std::to_string(n_blocks) +
                                              " blocks of length " + std::to_string(block_length));
    const std::size_t used = out.n_years * n_blocks;
    out.dropped = T - used * block_length;

    std::vector<std::vector<double>> per_site(D);
    std::vector<double> ts(T);
    for (std::size_t s = 0; s < D; ++s) {
        for (std::size_t t = 0; t < T; ++t) ts[t] = series.samples[t].values[s];
        auto ext = block_minima(ts, block_length, negate);
        ext.values.resize(used);
        per_site[s] = std::move(ext.values);
    }

    std::vector<std::optional<GevFit>> slots(D);
    parallel_for(D, [&](std::size_t s) {
        BlockSeries bs{n_blocks, out.n_years, per_site[s]};
        try {
            slots[s] = fit_gev(bs);
        } catch (const GevFitError& e) {
            slots[s] = e.best();
        } catch (const Error& e) {
            fail(e.kind(), "site " + std::to_string(s % g.nx()) + "," + std::to_string(s / g.nx()) + ": " + e.what());
        }
    });
    for (auto& f : slots) out.fits.push_back(std::move(*f));

    out.extremes.meta = series.meta;
    out.extremes.meta.role = "fields";
    out.extremes.meta.scale = "raw";
    out.extremes.meta.param_ranges.reset();
    out.extremes.meta.model.reset();
    for (std::size_t k = 0; k < used; ++k) {
        FieldSample f{g, std::vector<double>(D), std::nullopt, std::nullopt, std::nullopt, false};
        for (std::size_t s = 0; s < D; ++s) f.values[s] = per_site[s][k];
        out.extremes.samples.push_back(std::move(f));
    }
    return out;
}

DatasetBundle to_frechet_bundle(const DatasetBundle& extremes, const std::vector<GevParams>& params) {
    extremes.validate();
    const Grid& g = extremes.grid();
    require(params.size() == g.size(), "need one set of GEV parameters per site");
    const std::size_t B = params.front().n_blocks();
    DatasetBundle out = extremes;
    out.meta.scale = "frechet";
    for (std::size_t k = 0; k < out.samples.size(); ++k) {
        auto& f = out.samples[k];
        for (std::size_t s = 0; s < g.size(); ++s) {
            require(params[s].n_blocks() == B, "GEV parameter sets disagree on the block count");
            try {
                f.values[s] = to_frechet(f.values[s], params[s], k % B);
            } catch (const Error& e) {
                fail(e.kind(), "image " + std::to_string(k) + ", site " + std::to_string(s % g.nx()) + "," +
                                   std::to_string(s / g.nx()) + ": " + e.what());
            }
        }
    }
    return out;
}

void write_gev_csv(const std::filesystem::path& path, const Grid& grid, const std::vector<GevFit>& fits) {
    require(fits.size() == grid.size(), "need one GEV fit per site");
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
    const std::size_t B = fits.front().params.n_blocks();
    out << "site_i,site_j";
    for (std::size_t b = 1; b <= B; ++b) out << ",mu_" << b;
    out << ",sigma,xi,loglik,converged\n";
    out << std::setprecision(17);
    for (std::size_t s = 0; s < fits.size(); ++s) {
        const auto& f = fits[s];
        out << s % grid.nx() << ',' << s / grid.nx();
        for (double m : f.params.mu) out << ',' << m;
        out << ',' << f.params.sigma << ',' << f.params.xi << ',' << f.loglik << ',' << (f.converged ? 1 : 0) << '\n';
    }
    if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

std::vector<GevParams> read_gev_csv(const std::filesystem::path& path, const Grid& grid) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) fail(ErrorKind::CorruptFile, path.string() + ": empty file");
    std::size_t B = 0;
    {
        std::istringstream hs(line);
        std::string col;
        while (std::getline(hs, col, ','))
            if (col.rfind("mu_", 0) == 0) ++B;
    }
    if (B == 0) fail(ErrorKind::Schema, path.string() + ": no mu_ columns");
    std::vector<std::optional<GevParams>> slots(grid.size());
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::vector<double> v;
        try {
            while (std::getline(ls, cell, ',')) v.push_back(std::stod(cell));
        } catch (const std::exception&) {
            fail(ErrorKind::CorruptFile, path.string() + ":" + std::to_string(line_no) + ": not a number");
        }
        if (v.size() < B + 4)
            fail(ErrorKind::CorruptFile, path.string() + ":" + std::to_string(line_no) + ": too few columns");
        const auto i = static_cast<std::size_t>(v[0]);
        const auto j = static_cast<std::size_t>(v[1]);
        if (i >= grid.nx() || j >= grid.ny())
            fail(ErrorKind::Schema, path.string() + ":" + std::to_string(line_no) + ": site outside the grid");
        GevParams p;
        p.mu.assign(v.begin() + 2, v.begin() + 2 + static_cast<std::ptrdiff_t>(B));
        p.sigma = v[2 + B];
        p.xi = v[3 + B];
        if (!(p.sigma > 0.0))
            fail(ErrorKind::Schema, path.string() + ":" + std::to_string(line_no) + ": sigma must be positive");
        slots[grid.index(i, j)] = std::move(p);
    }
    std::vector<GevParams> out;
    for (std::size_t s = 0; s < slots.size(); ++s) {
        if (!slots[s]) fail(ErrorKind::Schema, path.string() + ": no parameters for site " + std::to_string(s));
        out.push_back(std::move(*slots[s]));
    }
    return out;
}

}  // namespace msinfer
