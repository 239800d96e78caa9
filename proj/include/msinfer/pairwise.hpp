#pragma once

#include "msinfer/grid.hpp"
#include "msinfer/optimize.hpp"
#include "msinfer/rng.hpp"
#include "msinfer/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace msinfer {

struct SitePair {
    std::uint32_t first = 0;
    std::uint32_t second = 0;
    /// Index into PairSet::distances.
    std::uint32_t distance_class = 0;
};

/// All site pairs (first < second) with 0 < h <= delta, grouped by their
/// distinct separations so per-distance quantities are computed once.
struct PairSet {
    std::vector<SitePair> pairs;
    std::vector<double> distances;
    double delta = 0.0;

    [[nodiscard]] static PairSet build(const Grid& grid, double delta);
    [[nodiscard]] double distance(const SitePair& p) const { return distances[p.distance_class]; }
};

struct PLConfig {
    double delta = 3.0;
    std::size_t n_random_starts = 20;
    std::size_t n_refined = 5;
    std::pair<double, double> lambda_bounds{1e-3, 100.0};
    std::pair<double, double> nu_bounds{1e-2, 2.0};
    /// Random starts: lambda in center * [1 - s, 1 + s], nu in center +- nu_spread.
    double lambda_spread = 0.5;
    double nu_spread = 0.3;
    OptimizerOptions optimizer;

    void validate() const;
};

/// Weighted (0/1 cutoff) pairwise log-likelihood of one field; -inf when any
/// pair density is not positive.
[[nodiscard]] double pl_objective(const FieldSample& sample, Family family, const DependenceParams& params,
                                  const PairSet& pairs);

struct StartPoint {
    DependenceParams params;
    double objective = 0.0;
};

struct FitReport {
    Family family = Family::BrownResnick;
    DependenceParams estimate;
    double objective = 0.0;
    bool converged = false;
    int iterations = 0;
    int evaluations = 0;
    double seconds = 0.0;
    std::string message;
    std::vector<StartPoint> starts;
};

[[nodiscard]] nlohmann::json to_json(const FitReport& report);
[[nodiscard]] FitReport fit_report_from_json(const nlohmann::json& j);

/// Multi-start maximization: evaluate n_random_starts points around
/// init_center, refine the n_refined best with the box quasi-Newton method,
/// and report the best refined point.
[[nodiscard]] FitReport fit_pl(const FieldSample& sample, Family family, const PLConfig& config,
                               const DependenceParams& init_center, RngStream& rng);

}  // namespace msinfer
