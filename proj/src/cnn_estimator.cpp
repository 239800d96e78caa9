#include "msinfer/cnn_estimator.hpp"

#include "msinfer/error.hpp"
#include "msinfer/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>

namespace msinfer {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr double kGuard = 1e-3;

}  // namespace

void PriorBox::validate() const {
    require(lambda_range.first > 0.0 && lambda_range.first < lambda_range.second, "prior lambda range must satisfy 0 < a < b");
    require(nu_range.first > 0.0 && nu_range.first < nu_range.second && nu_range.second <= 2.0,
            "prior nu range must satisfy 0 < a < b <= 2");
    require(n_train >= 1, "n_train must be at least 1");
}

json to_json(const PriorBox& p) {
    return {{"lambda_range", {p.lambda_range.first, p.lambda_range.second}},
            {"nu_range", {p.nu_range.first, p.nu_range.second}},
            {"n_train", p.n_train}};
}

PriorBox prior_box_from_json(const json& j) {
    PriorBox p;
    try {
        if (j.contains("lambda_range")) p.lambda_range = {j["lambda_range"].at(0).get<double>(), j["lambda_range"].at(1).get<double>()};
        if (j.contains("nu_range")) p.nu_range = {j["nu_range"].at(0).get<double>(), j["nu_range"].at(1).get<double>()};
        p.n_train = j.value("n_train", p.n_train);
    } catch (const json::exception& e) {
        fail(ErrorKind::Schema, std::string("malformed prior: ") + e.what());
    }
    p.validate();
    return p;
}

namespace transform {

double input(double z) {
    if (!(z > 0.0) || !std::isfinite(z))
        fail(ErrorKind::InvalidArgument, "field values must be positive and finite (Frechet scale)");
    return std::log(z);
}

std::array<double, 2> forward(const DependenceParams& p) {
    require(p.lambda > 0.0 && p.nu > 0.0 && p.nu < 2.0, "output transform needs lambda > 0 and 0 < nu < 2");
    return {std::log(p.lambda), std::log(p.nu / (2.0 - p.nu))};
}

DependenceParams inverse(double u_lambda, double u_nu) {
    double lambda = std::exp(u_lambda);
    double nu = u_nu >= 0.0 ? 2.0 / (1.0 + std::exp(-u_nu)) : 2.0 * std::exp(u_nu) / (1.0 + std::exp(u_nu));
    lambda = std::clamp(lambda, std::numeric_limits<double>::min(), std::numeric_limits<double>::max());
    nu = std::clamp(nu, std::numeric_limits<double>::min(), std::nextafter(2.0, 0.0));
    return {lambda, nu};
}

}  // namespace transform

TrainingSet make_training_set(Family family, const PriorBox& prior, const Grid& grid, const TruncationPolicy& trunc,
                              std::uint64_t seed) {
    prior.validate();
    std::vector<std::optional<FieldSample>> slots(prior.n_train);
    parallel_for(prior.n_train, [&](std::size_t j) {
        RngStream rng = RngStream(seed, 1).split(j);
        const double lambda = rng.uniform(prior.lambda_range.first, prior.lambda_range.second);
        const double nu = rng.uniform(prior.nu_range.first, prior.nu_range.second);
        RngStream field_rng(rng.next_u64());
        try {
            MaxStableSimulator sim({family, {lambda, nu}}, grid, trunc);
            slots[j] = sim.simulate(field_rng);
        } catch (const Error& e) {
            fail(e.kind(), "training sample " + std::to_string(j) + ": " + e.what());
        }
    });

    TrainingSet set;
    set.bundle.meta.model = family;
    set.bundle.meta.seed = seed;
    set.bundle.meta.param_ranges = ParamRanges{prior.lambda_range, prior.nu_range};
    set.bundle.samples.reserve(prior.n_train);
    for (auto& s : slots) set.bundle.samples.push_back(std::move(*s));
    set.outputs = transformed_outputs(set.bundle.samples);
    return set;
}

Tensor4 field_tensor(const std::vector<FieldSample>& samples) {
    require(!samples.empty(), "no fields to convert");
    const Grid& g = samples.front().grid;
    Tensor4 t(samples.size(), g.ny(), g.nx(), 1);
    for (std::size_t k = 0; k < samples.size(); ++k) {
        require(samples[k].grid == g, "fields must share one grid");
        require(samples[k].values.size() == g.size(), "field size does not match its grid");
        for (std::size_t s = 0; s < g.size(); ++s) t.data[k * g.size() + s] = transform::input(samples[k].values[s]);
    }
    return t;
}

RowMatrix transformed_outputs(const std::vector<FieldSample>& samples) {
    RowMatrix out(static_cast<Eigen::Index>(samples.size()), 2);
    for (std::size_t k = 0; k < samples.size(); ++k) {
        require(samples[k].params.has_value(), "training sample " + std::to_string(k) + " has no parameters");
        const auto u = transform::forward(*samples[k].params);
        out(static_cast<Eigen::Index>(k), 0) = u[0];
        out(static_cast<Eigen::Index>(k), 1) = u[1];
    }
    return out;
}

CnnEstimator fit_estimator(const DatasetBundle& train_set, const RowMatrix& outputs, const NetworkSpec& spec,
                           const TrainConfig& cfg, RngStream& rng) {
    train_set.validate();
    const Grid& g = train_set.grid();
    require(spec.input == Shape3{g.ny(), g.nx(), 1}, "training grid " + std::to_string(g.ny()) + "x" +
                                                         std::to_string(g.nx()) + " does not match the network input");
    require(static_cast<std::size_t>(outputs.rows()) == train_set.samples.size() && outputs.cols() == 2,
            "outputs must be n x 2");

    CnnEstimator est;
    est.family = train_set.meta.model.value_or(Family::BrownResnick);
    est.prior.n_train = train_set.samples.size();
    if (train_set.meta.param_ranges) {
        est.prior.lambda_range = train_set.meta.param_ranges->lambda;
        est.prior.nu_range = train_set.meta.param_ranges->nu;
    }
    est.train_config = cfg;
    const auto t0 = std::chrono::steady_clock::now();
    est.net = train(spec, field_tensor(train_set.samples), outputs, cfg, rng);
    est.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return est;
}

std::vector<DependenceParams> estimate_all(const CnnEstimator& est, const std::vector<FieldSample>& samples) {
    if (samples.empty()) return {};
    const RowMatrix u = predict(est.net, field_tensor(samples));
    std::vector<DependenceParams> out;
    out.reserve(samples.size());
    for (Eigen::Index k = 0; k < u.rows(); ++k) out.push_back(transform::inverse(u(k, 0), u(k, 1)));
    return out;
}

DependenceParams estimate(const CnnEstimator& est, const FieldSample& sample) {
    return estimate_all(est, {sample}).front();
}

PriorBox prior_from_pl(const std::vector<FitReport>& reports, std::size_t n_train) {
    std::vector<double> lam, nu;
    for (const auto& r : reports) {
        if (!r.converged) continue;
        lam.push_back(r.estimate.lambda);
        nu.push_back(r.estimate.nu);
    }
    if (lam.size() < 2)
        fail(ErrorKind::InsufficientData, "need at least 2 converged pairwise fits to build a prior, got " +
                                              std::to_string(lam.size()));

    const auto range = [](const std::vector<double>& v, double upper_cap) {
        const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
        const double pad = sd > 0.0 ? 3.0 * sd : kGuard;
        double lo = std::max(*mn - pad, kGuard);
        double hi = std::min(*mx + pad, upper_cap);
        if (!(hi > lo)) lo = hi - kGuard;
        return std::pair{lo, hi};
    };

    PriorBox p;
    p.lambda_range = range(lam, std::numeric_limits<double>::infinity());
    p.nu_range = range(nu, 2.0 - kGuard);
    p.n_train = n_train;
    p.validate();
    return p;
}

void save_estimator(const CnnEstimator& est, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
    save_network(est.net, dir / "network");
    json j{{"family", std::string(to_string(est.family))},
           {"prior", to_json(est.prior)},
           {"train_config", to_json(est.train_config)},
           {"input_transform", "log"},
           {"output_transform", {"log", "log(nu/(2-nu))"}}};
    std::ofstream out(dir / "estimator.json", std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + (dir / "estimator.json").string());
    out << j.dump(2) << '\n';
}

CnnEstimator load_estimator(const fs::path& dir) {
    std::ifstream in(dir / "estimator.json");
    if (!in) fail(ErrorKind::Io, "cannot open " + (dir / "estimator.json").string());
    CnnEstimator est;
    try {
        const json j = json::parse(in);
        est.family = parse_family(j.at("family").get<std::string>());
        est.prior = prior_box_from_json(j.at("prior"));
        est.train_config = train_config_from_json(j.value("train_config", json::object()));
    } catch (const json::exception& e) {
        fail(ErrorKind::CorruptFile, (dir / "estimator.json").string() + ": " + e.what());
    }
    est.net = load_network(dir / "network");
    return est;
}

}  // namespace msinfer
