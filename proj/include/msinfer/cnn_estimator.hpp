#pragma once

#include "msinfer/bundle.hpp"
#include "msinfer/maxstable.hpp"
#include "msinfer/nn.hpp"
#include "msinfer/pairwise.hpp"

#include <json.hpp>

#include <array>
#include <filesystem>
#include <utility>
#include <vector>

namespace msinfer {

struct PriorBox {
    std::pair<double, double> lambda_range{0.1, 3.0};
    std::pair<double, double> nu_range{0.5, 1.9};
    std::size_t n_train = 2000;

    void validate() const;
    bool operator==(const PriorBox&) const = default;
};

[[nodiscard]] nlohmann::json to_json(const PriorBox& prior);
[[nodiscard]] PriorBox prior_box_from_json(const nlohmann::json& j);

/// Log on field values; (log lambda, log(nu / (2 - nu))) on parameters.
namespace transform {
[[nodiscard]] double input(double z);
[[nodiscard]] std::array<double, 2> forward(const DependenceParams& p);
/// Always lands in (0, inf) x (0, 2); extreme inputs are clamped to the
/// nearest representable interior point.
[[nodiscard]] DependenceParams inverse(double u_lambda, double u_nu);
}  // namespace transform

struct TrainingSet {
    DatasetBundle bundle;
    /// n x 2, transformed scale.
    RowMatrix outputs;
};

/// Sample j draws (lambda, nu) and then its field from RngStream(seed, 1).split(j).
[[nodiscard]] TrainingSet make_training_set(Family family, const PriorBox& prior, const Grid& grid,
                                            const TruncationPolicy& trunc, std::uint64_t seed);

/// Log-transformed fields as an n x ny x nx x 1 tensor. Throws InvalidArgument
/// on non-positive values.
[[nodiscard]] Tensor4 field_tensor(const std::vector<FieldSample>& samples);

[[nodiscard]] RowMatrix transformed_outputs(const std::vector<FieldSample>& samples);

struct CnnEstimator {
    Family family = Family::BrownResnick;
    PriorBox prior;
    TrainConfig train_config;
    TrainedNetwork net;
    double train_seconds = 0.0;
};

[[nodiscard]] CnnEstimator fit_estimator(const DatasetBundle& train, const RowMatrix& outputs,
                                         const NetworkSpec& spec, const TrainConfig& cfg, RngStream& rng);

[[nodiscard]] DependenceParams estimate(const CnnEstimator& est, const FieldSample& sample);
[[nodiscard]] std::vector<DependenceParams> estimate_all(const CnnEstimator& est,
                                                         const std::vector<FieldSample>& samples);

/// Training box from pairwise-likelihood fits: range of the converged
/// estimates widened by three standard deviations and clipped to the
/// parameter space.
[[nodiscard]] PriorBox prior_from_pl(const std::vector<FitReport>& reports, std::size_t n_train = 2000);

/// Directory holding estimator.json and network.net.{json,bin}.
void save_estimator(const CnnEstimator& est, const std::filesystem::path& dir);
[[nodiscard]] CnnEstimator load_estimator(const std::filesystem::path& dir);

}  // namespace msinfer
