#pragma once

#include "msinfer/maxstable.hpp"
#include "msinfer/types.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace msinfer {

struct ScenarioGrid {
    Family family = Family::BrownResnick;
    std::vector<DependenceParams> scenarios;
    std::size_t replicates = 50;

    void validate() const;
    /// All combinations of lambdas x nus (lambda-major).
    static ScenarioGrid product(Family family, const std::vector<double>& lambdas, const std::vector<double>& nus,
                                std::size_t replicates = 50);
    /// The 16-scenario test grids of the simulation study.
    static ScenarioGrid standard(Family family, std::size_t replicates = 50);
    /// The four corners of the standard grid.
    static ScenarioGrid corners(Family family, std::size_t replicates = 20);
};

[[nodiscard]] nlohmann::json to_json(const ScenarioGrid& g);
[[nodiscard]] ScenarioGrid scenario_grid_from_json(const nlohmann::json& j);

struct EstimateOutcome {
    DependenceParams params;
    bool ok = true;
    std::string message;
};

/// Estimates every field of one scenario; `truth` is available for methods
/// that centre their starting values on it.
using BatchEstimator =
    std::function<std::vector<EstimateOutcome>(const std::vector<FieldSample>& fields, const DependenceParams& truth)>;

struct NamedEstimator {
    std::string name;
    BatchEstimator run;
};

enum class ScoreScale { Original, Transformed };

struct ScoreCell {
    std::string method;
    std::string parameter;  // "lambda" or "nu"
    ScoreScale scale = ScoreScale::Original;
    double rmse = 0.0;
    double mae = 0.0;
    double bias = 0.0;
    /// Population variance of the errors; rmse^2 = bias^2 + error_variance.
    double error_variance = 0.0;
    std::size_t n = 0;
    std::size_t failures = 0;
};

struct RawEstimate {
    std::string method;
    std::size_t scenario = 0;
    std::size_t replicate = 0;
    DependenceParams truth;
    DependenceParams estimate;
    bool ok = true;
    std::string message;
};

struct BenchmarkResult {
    std::vector<ScoreCell> scores;
    std::vector<RawEstimate> raw;
    /// Wall time spent inside each estimator, in estimator order.
    std::vector<double> seconds;

    [[nodiscard]] const ScoreCell& cell(const std::string& method, const std::string& parameter,
                                        ScoreScale scale = ScoreScale::Original) const;
};

/// Scenario k's replicates come from simulate_replicates(..., seed, stream = k);
/// every estimator sees the same fields.
[[nodiscard]] BenchmarkResult run_benchmark(const ScenarioGrid& scenarios, const std::vector<NamedEstimator>& estimators,
                                            const Grid& grid, const TruncationPolicy& trunc, std::uint64_t seed);

/// Scores from raw estimates, both scales. Failed estimates are excluded and counted.
[[nodiscard]] std::vector<ScoreCell> score_estimates(const std::vector<RawEstimate>& raw,
                                                     const std::vector<std::string>& methods);

/// scores.csv, raw_estimates.csv, failures.csv (deterministic) and timing.json.
void write_benchmark(const BenchmarkResult& result, const std::filesystem::path& dir);

struct MadogramBin {
    double h_lo = 0.0;
    double h_hi = 0.0;
    double h_center = 0.0;
    double h_mean = 0.0;
    std::size_t n_pairs = 0;
    double v_f = 0.0;
    double theta = 0.0;
    bool valid = false;
};

/// Binned F-madogram over all site pairs (h > 0, optionally h <= max_distance)
/// with equal-width bins spanning the observed distances. Sums are taken in
/// fixed point, so the result does not depend on replicate or pair order.
[[nodiscard]] std::vector<MadogramBin> f_madogram(const std::vector<FieldSample>& samples, std::size_t n_bins = 100,
                                                  std::optional<double> max_distance = std::nullopt);

/// theta = (1 + 2 v) / (1 - 2 v); +inf when v >= 1/2.
[[nodiscard]] double theta_from_madogram(double v_f) noexcept;
[[nodiscard]] double madogram_from_theta(double theta) noexcept;

/// Model-implied curve for a set of per-field estimates: the F-madogram of
/// each fitted model at each bin's mean distance, averaged over fields.
[[nodiscard]] std::vector<MadogramBin> model_madogram(Family family, const std::vector<DependenceParams>& params,
                                                      const std::vector<MadogramBin>& bins);

/// Mean |theta_a - theta_b| over bins valid in both curves.
[[nodiscard]] double madogram_mad(const std::vector<MadogramBin>& a, const std::vector<MadogramBin>& b);

void write_madogram_csv(const std::filesystem::path& path, const std::vector<MadogramBin>& bins);

enum class FieldStatistic { Min, Mean, Max };

struct QQRow {
    FieldStatistic statistic = FieldStatistic::Min;
    double probability = 0.0;
    double observed = 0.0;
    double sim_median = 0.0;
    double sim_lo = 0.0;
    double sim_hi = 0.0;
};

/// For each observed field, n_sim fields are simulated at its fitted
/// parameters. Per-field site statistics (min, mean, max) are compared at the
/// percentiles 1..99: observed quantiles against the median and 2.5/97.5%
/// envelope of the quantiles of the simulated replicate sets.
[[nodiscard]] std::vector<QQRow> qq_summaries(const std::vector<FieldSample>& observed,
                                              const std::vector<DependenceParams>& fitted, Family family,
                                              std::size_t n_sim, const TruncationPolicy& trunc, std::uint64_t seed);

void write_qq_csv(const std::filesystem::path& path, const std::vector<QQRow>& rows);

/// Type-7 (linear interpolation) empirical quantile of unsorted data.
[[nodiscard]] double empirical_quantile(std::vector<double> values, double p);

}  // namespace msinfer
