#include "msinfer/optimize.hpp"

#include "msinfer/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace msinfer {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double guarded(const Objective& f, std::span<const double> x, int& evals) {
    ++evals;
    const double v = f(x);
    return std::isnan(v) ? kInf : v;
}

void project(std::vector<double>& x, const BoxBounds& b) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], b.lower[i], b.upper[i]);
}

double projected_gradient_norm(const std::vector<double>& x, const std::vector<double>& g, const BoxBounds& b) {
    double norm = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double moved = std::clamp(x[i] - g[i], b.lower[i], b.upper[i]);
        norm = std::max(norm, std::abs(moved - x[i]));
    }
    return norm;
}

using Mat = std::vector<std::vector<double>>;

Mat identity(std::size_t n, double scale = 1.0) {
    Mat m(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) m[i][i] = scale;
    return m;
}

}  // namespace

std::vector<double> numeric_gradient(const Objective& f, std::span<const double> x, double fx, const BoxBounds& b,
                                     double rel_step, int* evaluations) {
    int evals = 0;
    std::vector<double> probe(x.begin(), x.end());
    std::vector<double> g(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double h = rel_step * std::max(std::abs(x[i]), 1.0);
        const double up = std::min(x[i] + h, b.upper[i]);
        const double dn = std::max(x[i] - h, b.lower[i]);
        probe[i] = up;
        const double fu = up > x[i] ? guarded(f, probe, evals) : kInf;
        probe[i] = dn;
        const double fd = dn < x[i] ? guarded(f, probe, evals) : kInf;
        probe[i] = x[i];
        if (std::isfinite(fu) && std::isfinite(fd))
            g[i] = (fu - fd) / (up - dn);
        else if (std::isfinite(fu))
            g[i] = (fu - fx) / (up - x[i]);
        else if (std::isfinite(fd))
            g[i] = (fx - fd) / (x[i] - dn);
        else
            g[i] = 0.0;
    }
    if (evaluations) *evaluations += evals;
    return g;
}

OptimizationResult minimize_box(const Objective& f, std::vector<double> x0, const BoxBounds& b,
                                const OptimizerOptions& opt) {
    const std::size_t n = x0.size();
    require(b.lower.size() == n && b.upper.size() == n, "bounds dimension mismatch");
    for (std::size_t i = 0; i < n; ++i) require(b.lower[i] <= b.upper[i], "empty box");

    OptimizationResult res;
    project(x0, b);
    res.x = x0;
    res.f = guarded(f, res.x, res.evaluations);
    if (!std::isfinite(res.f)) {
        res.message = "objective is infeasible at the starting point";
        return res;
    }

    std::vector<double> g = numeric_gradient(f, res.x, res.f, b, opt.fd_step, &res.evaluations);
    Mat h = identity(n);
    bool fresh = true;

    for (res.iterations = 1; res.iterations <= opt.max_iterations; ++res.iterations) {
        const double scale = std::max(std::abs(res.f), 1.0);
        if (projected_gradient_norm(res.x, g, b) <= opt.pg_tol * scale) {
            res.converged = true;
            res.message = "projected gradient below tolerance";
            return res;
        }

        std::vector<bool> active(n, false);
        for (std::size_t i = 0; i < n; ++i)
            active[i] = (res.x[i] <= b.lower[i] && g[i] > 0.0) || (res.x[i] >= b.upper[i] && g[i] < 0.0);

        std::vector<double> d(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            if (active[i]) continue;
            for (std::size_t j = 0; j < n; ++j)
                if (!active[j]) d[i] -= h[i][j] * g[j];
        }
        double slope = 0.0;
        for (std::size_t i = 0; i < n; ++i) slope += g[i] * d[i];
        if (!(slope < 0.0)) {
            h = identity(n);
            fresh = true;
            for (std::size_t i = 0; i < n; ++i) d[i] = active[i] ? 0.0 : -g[i];
        }

        std::vector<double> xn(n);
        double fn = kInf;
        bool accepted = false;
        double t = 1.0;
        for (int k = 0; k < 60; ++k, t *= 0.5) {
            for (std::size_t i = 0; i < n; ++i) xn[i] = res.x[i] + t * d[i];
            project(xn, b);
            double decrease = 0.0;
            for (std::size_t i = 0; i < n; ++i) decrease += g[i] * (xn[i] - res.x[i]);
            fn = guarded(f, xn, res.evaluations);
            if (std::isfinite(fn) && fn <= res.f + 1e-4 * decrease && fn <= res.f) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            if (!fresh) {
                h = identity(n);
                fresh = true;
                continue;
            }
            res.converged = projected_gradient_norm(res.x, g, b) <= 1e-3 * scale;
            res.message = "line search could not reduce the objective";
            return res;
        }

        const double improvement = res.f - fn;
        std::vector<double> gn = numeric_gradient(f, xn, fn, b, opt.fd_step, &res.evaluations);
        std::vector<double> s(n), y(n);
        double sy = 0.0, yy = 0.0, ss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = xn[i] - res.x[i];
            y[i] = gn[i] - g[i];
            sy += s[i] * y[i];
            yy += y[i] * y[i];
            ss += s[i] * s[i];
        }
        res.x = std::move(xn);
        res.f = fn;
        g = std::move(gn);

        if (improvement <= opt.f_tol * std::max(std::abs(res.f), 1.0)) {
            res.converged = true;
            res.message = "relative objective change below tolerance";
            return res;
        }

        if (sy > 1e-10 * std::sqrt(ss * yy)) {
            if (fresh) h = identity(n, sy / yy);
            fresh = false;
            // H <- (I - r s y^T) H (I - r y s^T) + r s s^T
            const double r = 1.0 / sy;
            std::vector<double> hy(n, 0.0);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) hy[i] += h[i][j] * y[j];
            double yhy = 0.0;
            for (std::size_t i = 0; i < n; ++i) yhy += y[i] * hy[i];
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    h[i][j] += -r * (s[i] * hy[j] + hy[i] * s[j]) + (r * r * yhy + r) * s[i] * s[j];
        }
    }
    res.iterations = opt.max_iterations;
    res.message = "iteration limit reached";
    return res;
}

}  // namespace msinfer
