#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace msinfer {

struct BoxBounds {
    std::vector<double> lower;
    std::vector<double> upper;
};

struct OptimizerOptions {
    int max_iterations = 500;
    /// Stop when one step improves the objective by less than f_tol * max(|f|, 1).
    double f_tol = 1e-8;
    /// Stop when the projected gradient's max-norm is below pg_tol * max(|f|, 1).
    double pg_tol = 1e-8;
    /// Central-difference step, relative to max(|x_i|, 1).
    double fd_step = 1e-5;
};

struct OptimizationResult {
    std::vector<double> x;
    double f = 0.0;
    bool converged = false;
    int iterations = 0;
    int evaluations = 0;
    std::string message;
};

/// Objective to minimize. Returning +inf (or NaN) marks the point infeasible.
using Objective = std::function<double(std::span<const double>)>;

/// Projected quasi-Newton (BFGS on the free variables, projected backtracking
/// line search) with finite-difference gradients. Never returns a point worse
/// than the clipped starting point.
[[nodiscard]] OptimizationResult minimize_box(const Objective& f, std::vector<double> x0, const BoxBounds& bounds,
                                              const OptimizerOptions& options = {});

/// Central differences, falling back to one-sided steps at the box faces or
/// next to infeasible points.
[[nodiscard]] std::vector<double> numeric_gradient(const Objective& f, std::span<const double> x, double fx,
                                                   const BoxBounds& bounds, double rel_step, int* evaluations = nullptr);

}  // namespace msinfer
