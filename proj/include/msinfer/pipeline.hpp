#pragma once

#include "msinfer/bundle.hpp"
#include "msinfer/cnn_estimator.hpp"
#include "msinfer/diagnostics.hpp"
#include "msinfer/error.hpp"
#include "msinfer/maxstable.hpp"
#include "msinfer/nn.hpp"
#include "msinfer/pairwise.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace msinfer {

inline constexpr const char* kVersion = "0.1.0";

struct ObservedOptions {
    std::size_t block_length = 10;
    std::size_t n_blocks = 6;
    bool negate = true;
    std::size_t madogram_bins = 100;
    std::optional<double> madogram_max_distance;
    std::size_t qq_nsim = 200;
    /// Network for the observed-data estimator, sized to the data grid at run
    /// time unless an explicit spec is given.
    std::string network = "table3";
    std::optional<NetworkSpec> network_spec;

    [[nodiscard]] NetworkSpec resolve_network(const Grid& grid) const;
};

struct PipelineConfig {
    Family family = Family::BrownResnick;
    Grid grid{25, 25, 20.0, 20.0};
    NetworkSpec network = NetworkSpec::table1();
    TrainConfig train;
    PriorBox prior;
    ScenarioGrid scenarios = ScenarioGrid::standard(Family::BrownResnick);
    PLConfig pl;
    /// Centre of the pairwise-likelihood starting values on observed data.
    DependenceParams pl_center{1.0, 1.0};
    std::optional<TruncationPolicy> truncation;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "msinfer-out";
    ObservedOptions observed;

    [[nodiscard]] TruncationPolicy trunc() const;
    /// Stage seed derived from the master seed.
    [[nodiscard]] std::uint64_t stage_seed(const std::string& stage) const;
};

/// Keys: family, grid {nx, ny, extent}, network ("table1" | "table3" | spec
/// object), train, prior, scenarios, pl, pl_center, truncation, seed (required),
/// output_dir, observed. Relative output_dir is resolved against base_dir.
[[nodiscard]] PipelineConfig pipeline_config_from_json(const nlohmann::json& j,
                                                       const std::filesystem::path& base_dir = {});
[[nodiscard]] PipelineConfig load_pipeline_config(const std::filesystem::path& path);
[[nodiscard]] nlohmann::json to_json(const PipelineConfig& cfg);

/// A stage failure; keeps the underlying error kind.
class StageError : public Error {
public:
    StageError(const std::string& stage, const Error& cause)
        : Error(cause.kind(), "stage " + stage + ": " + cause.what()), stage_(stage) {}
    [[nodiscard]] const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

[[nodiscard]] std::string sha256_file(const std::filesystem::path& path);

/// Lists every regular file under dir (except manifest.json) with its SHA-256,
/// plus the config, version and stage records.
void write_manifest(const std::filesystem::path& dir, const nlohmann::json& config, const nlohmann::json& stages,
                    const std::string& status);

/// Estimates CSV: sample_id, lambda_hat, nu_hat.
void write_estimates_csv(const std::filesystem::path& path, const std::vector<DependenceParams>& estimates);
[[nodiscard]] std::vector<DependenceParams> read_estimates_csv(const std::filesystem::path& path);

/// Writes fit reports (without wall-clock fields) as a JSON array.
void write_fit_reports(const std::filesystem::path& path, const std::vector<FitReport>& reports);
[[nodiscard]] std::vector<FitReport> read_fit_reports(const std::filesystem::path& path);

/// Pairwise-likelihood fit of every sample (parallel over samples); sample k
/// draws its starting values from RngStream(seed, k).
[[nodiscard]] std::vector<FitReport> fit_pl_all(const std::vector<FieldSample>& samples, Family family,
                                                const PLConfig& config, const DependenceParams& center,
                                                std::uint64_t seed);

/// Keeps floor-of-linspace column and row indices (nx x ny of them); the
/// result is a regular grid over the same extent.
[[nodiscard]] DatasetBundle subsample(const DatasetBundle& in, std::size_t nx, std::size_t ny);

struct StudyResult {
    BenchmarkResult benchmark;
    std::vector<double> loss_trace;
    double train_seconds = 0.0;
};

/// Training set, CNN training, CNN + PL estimation of the scenario grid and
/// scoring; every artifact goes under cfg.output_dir with a manifest.
StudyResult run_simulation_study(const PipelineConfig& cfg);

struct ObservedResult {
    std::vector<FitReport> pl_reports;
    PriorBox prior;
    std::vector<DependenceParams> cnn_estimates;
    std::vector<MadogramBin> empirical;
    std::vector<MadogramBin> cnn_curve;
    std::vector<MadogramBin> pl_curve;
    double mad_cnn = 0.0;
    double mad_pl = 0.0;
    bool gev_skipped = false;
};

/// Block extremes, sitewise GEV, Frechet transform (skipped when the data are
/// already on the Frechet scale), PL fits, prior, training set, CNN, CNN
/// estimates, madogram and qq outputs.
ObservedResult run_observed_pipeline(const PipelineConfig& cfg, const std::filesystem::path& data);

}  // namespace msinfer
