#include "msinfer/pipeline.hpp"

#include "msinfer/gev.hpp"
#include "msinfer/parallel.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

namespace msinfer {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
    if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorKind::CorruptFile, path.string() + ": " + e.what());
    }
}

// Runs stages in order, recording timings and wrapping failures with the stage name.
class StageRunner {
public:
    StageRunner(fs::path dir, json config) : dir_(std::move(dir)), config_(std::move(config)) {}

    template <class F>
    void run(const std::string& name, F&& body) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            body();
        } catch (const Error& e) {
            record(name, t0, "failed");
            finish("failed: " + name);
            throw StageError(name, e);
        } catch (const std::exception& e) {
            record(name, t0, "failed");
            finish("failed: " + name);
            throw StageError(name, Error(ErrorKind::Numerical, e.what()));
        }
        record(name, t0, "ok");
    }

    void finish(const std::string& status) {
        try {
            write_json(dir_ / "timing.json", timing_);
            write_manifest(dir_, config_, stages_, status);
        } catch (const Error&) {
            if (status == "ok") throw;
        }
    }

private:
    void record(const std::string& name, std::chrono::steady_clock::time_point t0, const std::string& status) {
        stages_.push_back({{"name", name}, {"status", status}});
        timing_[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }

    fs::path dir_;
    json config_;
    json stages_ = json::array();
    json timing_ = json::object();
};

std::vector<EstimateOutcome> pl_outcomes(const std::vector<FitReport>& reports) {
    std::vector<EstimateOutcome> out;
    for (const auto& r : reports)
        out.push_back({r.estimate, r.converged, r.converged ? std::string() : "pairwise likelihood: " + r.message});
    return out;
}

}  // namespace

TruncationPolicy PipelineConfig::trunc() const {
    return truncation ? *truncation : TruncationPolicy::defaults_for(family, grid);
}

std::uint64_t PipelineConfig::stage_seed(const std::string& stage) const { return mix64(seed ^ fnv1a(stage)); }

PipelineConfig pipeline_config_from_json(const json& j, const fs::path& base_dir) {
    PipelineConfig c;
    try {
        if (!j.contains("seed")) fail(ErrorKind::Schema, "config must set an explicit seed");
        c.seed = j.at("seed").get<std::uint64_t>();
        c.family = parse_family(j.value("family", std::string("br")));
        if (j.contains("grid")) {
            const auto& g = j["grid"];
            const auto nx = g.value("nx", std::size_t{25});
            const auto ny = g.value("ny", nx);
            double ex = 20.0, ey = 20.0;
            if (g.contains("extent")) {
                if (g["extent"].is_array()) {
                    ex = g["extent"].at(0).get<double>();
                    ey = g["extent"].at(1).get<double>();
                } else {
                    ex = ey = g["extent"].get<double>();
                }
            }
            c.grid = Grid(nx, ny, ex, ey);
        }
        if (j.contains("network")) {
            const auto& n = j["network"];
            c.network = n.is_string() ? NetworkSpec::by_name(n.get<std::string>(), c.grid.ny(), c.grid.nx())
                                      : network_spec_from_json(n);
            if (n.is_string()) c.observed.network = n.get<std::string>();
            else c.observed.network_spec = c.network;
        } else {
            c.network = NetworkSpec::table1(c.grid.ny(), c.grid.nx());
        }
        if (j.contains("train")) c.train = train_config_from_json(j["train"]);
        if (j.contains("prior")) c.prior = prior_box_from_json(j["prior"]);
        else if (c.family == Family::Schlather) c.prior.nu_range = {0.5, 1.8};
        if (j.contains("scenarios")) {
            json s = j["scenarios"];
            if (!s.contains("family")) s["family"] = std::string(to_string(c.family));
            c.scenarios = scenario_grid_from_json(s);
        } else {
            c.scenarios = ScenarioGrid::standard(c.family);
        }
        if (j.contains("pl")) {
            const auto& p = j["pl"];
            c.pl.delta = p.value("delta", c.pl.delta);
            c.pl.n_random_starts = p.value("n_random_starts", c.pl.n_random_starts);
            c.pl.n_refined = p.value("n_refined", c.pl.n_refined);
            if (p.contains("lambda_bounds"))
                c.pl.lambda_bounds = {p["lambda_bounds"].at(0).get<double>(), p["lambda_bounds"].at(1).get<double>()};
            if (p.contains("nu_bounds"))
                c.pl.nu_bounds = {p["nu_bounds"].at(0).get<double>(), p["nu_bounds"].at(1).get<double>()};
            c.pl.lambda_spread = p.value("lambda_spread", c.pl.lambda_spread);
            c.pl.nu_spread = p.value("nu_spread", c.pl.nu_spread);
            c.pl.optimizer.max_iterations = p.value("max_iterations", c.pl.optimizer.max_iterations);
        }
        c.pl.validate();
        if (j.contains("pl_center"))
            c.pl_center = DependenceParams::checked(j["pl_center"].at(0).get<double>(), j["pl_center"].at(1).get<double>());
        if (j.contains("truncation")) {
            TruncationPolicy t = TruncationPolicy::defaults_for(c.family, c.grid);
            t.c_bound = j["truncation"].value("c_bound", t.c_bound);
            t.max_poisson_points = j["truncation"].value("max_poisson_points", t.max_poisson_points);
            require(t.c_bound > 0.0 && t.max_poisson_points > 0, "invalid truncation policy");
            c.truncation = t;
        }
        if (j.contains("output_dir")) {
            fs::path out = j["output_dir"].get<std::string>();
            c.output_dir = out.is_relative() && !base_dir.empty() ? base_dir / out : out;
        }
        if (j.contains("observed")) {
            const auto& o = j["observed"];
            auto& ob = c.observed;
            ob.block_length = o.value("block_length", ob.block_length);
            ob.n_blocks = o.value("n_blocks", ob.n_blocks);
            ob.negate = o.value("negate", ob.negate);
            ob.madogram_bins = o.value("madogram_bins", ob.madogram_bins);
            if (o.contains("madogram_max_distance") && !o["madogram_max_distance"].is_null())
                ob.madogram_max_distance = o["madogram_max_distance"].get<double>();
            ob.qq_nsim = o.value("qq_nsim", ob.qq_nsim);
            if (o.contains("network")) {
                if (o["network"].is_string()) {
                    ob.network = o["network"].get<std::string>();
                    ob.network_spec.reset();
                } else {
                    ob.network_spec = network_spec_from_json(o["network"]);
                }
            }
            if (!ob.network_spec) (void)NetworkSpec::by_name(ob.network, 25, 25);
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::Schema, std::string("malformed pipeline config: ") + e.what());
    }
    require(c.network.input == Shape3{c.grid.ny(), c.grid.nx(), 1}, "network input does not match the grid");
    require(c.network.output_dim() == 2, "network must have 2 outputs");
    return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
    return pipeline_config_from_json(read_json(path), path.parent_path());
}

NetworkSpec ObservedOptions::resolve_network(const Grid& grid) const {
    const NetworkSpec spec = network_spec ? *network_spec : NetworkSpec::by_name(network, grid.ny(), grid.nx());
    require(spec.input == Shape3{grid.ny(), grid.nx(), 1}, "network input does not match the data grid");
    return spec;
}

json to_json(const PipelineConfig& c) {
    json j{{"family", std::string(to_string(c.family))},
           {"grid", {{"nx", c.grid.nx()}, {"ny", c.grid.ny()}, {"extent", {c.grid.extent_x(), c.grid.extent_y()}}}},
           {"network", to_json(c.network)},
           {"train", to_json(c.train)},
           {"prior", to_json(c.prior)},
           {"scenarios", to_json(c.scenarios)},
           {"pl",
            {{"delta", c.pl.delta},
             {"n_random_starts", c.pl.n_random_starts},
             {"n_refined", c.pl.n_refined},
             {"lambda_bounds", {c.pl.lambda_bounds.first, c.pl.lambda_bounds.second}},
             {"nu_bounds", {c.pl.nu_bounds.first, c.pl.nu_bounds.second}},
             {"lambda_spread", c.pl.lambda_spread},
             {"nu_spread", c.pl.nu_spread},
             {"max_iterations", c.pl.optimizer.max_iterations}}},
           {"pl_center", {c.pl_center.lambda, c.pl_center.nu}},
           {"seed", c.seed},
           {"output_dir", c.output_dir.string()},
           {"observed",
            {{"block_length", c.observed.block_length},
             {"n_blocks", c.observed.n_blocks},
             {"negate", c.observed.negate},
             {"madogram_bins", c.observed.madogram_bins},
             {"madogram_max_distance",
              c.observed.madogram_max_distance ? json(*c.observed.madogram_max_distance) : json(nullptr)},
             {"qq_nsim", c.observed.qq_nsim},
             {"network", c.observed.network_spec ? to_json(*c.observed.network_spec) : json(c.observed.network)}}}};
    const auto t = c.trunc();
    j["truncation"] = {{"c_bound", t.c_bound}, {"max_poisson_points", t.max_poisson_points}};
    return j;
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) fail(ErrorKind::Io, "hash context allocation failed");
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return hex.str();
}

void write_manifest(const fs::path& dir, const json& config, const json& stages, const std::string& status) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    json listed = json::array();
    for (const auto& f : files) {
        const auto rel = fs::relative(f, dir).generic_string();
        listed.push_back({{"path", rel},
                          {"sha256", sha256_file(f)},
                          {"bytes", fs::file_size(f)},
                          {"deterministic", f.filename() != "timing.json"}});
    }
    write_json(dir / "manifest.json", {{"tool", "msinfer"},
                                       {"version", kVersion},
                                       {"status", status},
                                       {"config", config},
                                       {"stages", stages},
                                       {"files", listed}});
}

void write_estimates_csv(const fs::path& path, const std::vector<DependenceParams>& est) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
    out << std::setprecision(17) << "sample_id,lambda_hat,nu_hat\n";
    for (std::size_t k = 0; k < est.size(); ++k) out << k << ',' << est[k].lambda << ',' << est[k].nu << '\n';
    if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

std::vector<DependenceParams> read_estimates_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    std::vector<DependenceParams> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string id, l, n;
        if (!std::getline(ls, id, ',') || !std::getline(ls, l, ',') || !std::getline(ls, n, ','))
            fail(ErrorKind::CorruptFile, path.string() + ":" + std::to_string(line_no) + ": expected 3 columns");
        try {
            out.push_back(DependenceParams::checked(std::stod(l), std::stod(n)));
        } catch (const std::logic_error&) {
            fail(ErrorKind::CorruptFile, path.string() + ":" + std::to_string(line_no) + ": not a number");
        }
    }
    return out;
}

void write_fit_reports(const fs::path& path, const std::vector<FitReport>& reports) {
    json arr = json::array();
    for (const auto& r : reports) {
        json j = to_json(r);
        j.erase("seconds");
        arr.push_back(std::move(j));
    }
    write_json(path, arr);
}

std::vector<FitReport> read_fit_reports(const fs::path& path) {
    const json j = read_json(path);
    if (!j.is_array()) fail(ErrorKind::Schema, path.string() + ": expected an array of fit reports");
    std::vector<FitReport> out;
    for (const auto& r : j) out.push_back(fit_report_from_json(r));
    return out;
}

std::vector<FitReport> fit_pl_all(const std::vector<FieldSample>& samples, Family family, const PLConfig& config,
                                  const DependenceParams& center, std::uint64_t seed) {
    std::vector<std::optional<FitReport>> slots(samples.size());
    parallel_for(samples.size(), [&](std::size_t k) {
        RngStream rng(seed, k);
        slots[k] = fit_pl(samples[k], family, config, center, rng);
    });
    std::vector<FitReport> out;
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

DatasetBundle subsample(const DatasetBundle& in, std::size_t nx, std::size_t ny) {
    in.validate();
    const Grid& g = in.grid();
    require(nx >= 2 && ny >= 2 && nx <= g.nx() && ny <= g.ny(), "subsample size must be between 2 and the grid size");
    const auto pick = [](std::size_t n, std::size_t k) {
        std::vector<std::size_t> idx(k);
        for (std::size_t m = 0; m < k; ++m)
            idx[m] = static_cast<std::size_t>(std::floor(static_cast<double>(m) * static_cast<double>(n - 1) /
                                                         static_cast<double>(k - 1)));
        return idx;
    };
    const auto cols = pick(g.nx(), nx);
    const auto rows = pick(g.ny(), ny);
    const Grid out_grid(nx, ny, g.extent_x(), g.extent_y());
    DatasetBundle out;
    out.meta = in.meta;
    for (const auto& s : in.samples) {
        FieldSample f = s;
        f.grid = out_grid;
        f.values.assign(nx * ny, 0.0);
        for (std::size_t j = 0; j < ny; ++j)
            for (std::size_t i = 0; i < nx; ++i) f.values[j * nx + i] = s.values[g.index(cols[i], rows[j])];
        out.samples.push_back(std::move(f));
    }
    return out;
}

StudyResult run_simulation_study(const PipelineConfig& cfg) {
    const fs::path dir = cfg.output_dir;
    try {
        ensure_dir(dir);
    } catch (const Error& e) {
        throw StageError("output", e);
    }
    StageRunner stages(dir, to_json(cfg));
    const auto trunc = cfg.trunc();
    StudyResult result;

    std::optional<TrainingSet> ts;
    stages.run("training-set", [&] {
        PriorBox prior = cfg.prior;
        ts = make_training_set(cfg.family, prior, cfg.grid, trunc, cfg.stage_seed("training-set"));
        save_bundle(ts->bundle, dir / "training");
    });

    std::optional<CnnEstimator> est;
    stages.run("train-cnn", [&] {
        RngStream rng(cfg.stage_seed("train-cnn"));
        est = fit_estimator(ts->bundle, ts->outputs, cfg.network, cfg.train, rng);
        est->prior = cfg.prior;
        save_estimator(*est, dir / "estimator");
        result.loss_trace = est->net.loss_trace;
        result.train_seconds = est->train_seconds;
    });
    ts.reset();

    stages.run("benchmark", [&] {
        const std::uint64_t pl_seed = cfg.stage_seed("pl");
        std::vector<NamedEstimator> estimators{
            {"cnn",
             [&](const std::vector<FieldSample>& fields, const DependenceParams&) {
                 std::vector<EstimateOutcome> out;
                 for (const auto& p : estimate_all(*est, fields)) out.push_back({p, true, {}});
                 return out;
             }},
            {"pl", [&](const std::vector<FieldSample>& fields, const DependenceParams& truth) {
                 const std::uint64_t s =
                     mix64(pl_seed ^ std::bit_cast<std::uint64_t>(truth.lambda)) ^ std::bit_cast<std::uint64_t>(truth.nu);
                 return pl_outcomes(fit_pl_all(fields, cfg.family, cfg.pl, truth, s));
             }}};
        result.benchmark = run_benchmark(cfg.scenarios, estimators, cfg.grid, trunc, cfg.stage_seed("test"));
        write_benchmark(result.benchmark, dir / "benchmark");
    });
    stages.finish("ok");
    return result;
}

ObservedResult run_observed_pipeline(const PipelineConfig& cfg, const fs::path& data) {
    const fs::path dir = cfg.output_dir;
    try {
        ensure_dir(dir);
    } catch (const Error& e) {
        throw StageError("output", e);
    }
    json cj = to_json(cfg);
    cj["data"] = data.string();
    StageRunner stages(dir, cj);
    ObservedResult result;

    std::optional<DatasetBundle> input;
    stages.run("load", [&] {
        input = load_bundle(data);
        input->validate();
    });

    DatasetBundle frechet;
    if (input->meta.scale == "frechet") {
        result.gev_skipped = true;
        frechet = std::move(*input);
    } else {
        std::optional<SiteFits> fits;
        stages.run("gev", [&] {
            fits = fit_gev_sites(*input, cfg.observed.block_length, cfg.observed.n_blocks, cfg.observed.negate);
            write_gev_csv(dir / "gev_params.csv", input->grid(), fits->fits);
            save_bundle(fits->extremes, dir / "extremes");
        });
        stages.run("to-frechet", [&] {
            std::vector<GevParams> params;
            for (const auto& f : fits->fits) params.push_back(f.params);
            frechet = to_frechet_bundle(fits->extremes, params);
            save_bundle(frechet, dir / "frechet");
        });
    }
    input.reset();
    const Grid grid = frechet.grid();
    const NetworkSpec network = cfg.observed.resolve_network(grid);
    const TruncationPolicy trunc = cfg.truncation ? *cfg.truncation : TruncationPolicy::defaults_for(cfg.family, grid);

    stages.run("fit-pl", [&] {
        result.pl_reports = fit_pl_all(frechet.samples, cfg.family, cfg.pl, cfg.pl_center, cfg.stage_seed("fit-pl"));
        write_fit_reports(dir / "pl_reports.json", result.pl_reports);
        std::vector<DependenceParams> est;
        for (const auto& r : result.pl_reports) est.push_back(r.estimate);
        write_estimates_csv(dir / "pl_estimates.csv", est);
    });

    stages.run("prior", [&] {
        result.prior = prior_from_pl(result.pl_reports, cfg.prior.n_train);
        write_json(dir / "prior.json", to_json(result.prior));
    });

    std::optional<TrainingSet> ts;
    stages.run("training-set", [&] {
        ts = make_training_set(cfg.family, result.prior, grid, trunc, cfg.stage_seed("training-set"));
        save_bundle(ts->bundle, dir / "training");
    });

    std::optional<CnnEstimator> est;
    stages.run("train-cnn", [&] {
        RngStream rng(cfg.stage_seed("train-cnn"));
        est = fit_estimator(ts->bundle, ts->outputs, network, cfg.train, rng);
        est->prior = result.prior;
        save_estimator(*est, dir / "estimator");
    });
    ts.reset();

    stages.run("estimate", [&] {
        result.cnn_estimates = estimate_all(*est, frechet.samples);
        write_estimates_csv(dir / "cnn_estimates.csv", result.cnn_estimates);
    });

    std::vector<DependenceParams> pl_est;
    for (const auto& r : result.pl_reports) pl_est.push_back(r.estimate);

    stages.run("madogram", [&] {
        result.empirical = f_madogram(frechet.samples, cfg.observed.madogram_bins, cfg.observed.madogram_max_distance);
        result.cnn_curve = model_madogram(cfg.family, result.cnn_estimates, result.empirical);
        result.pl_curve = model_madogram(cfg.family, pl_est, result.empirical);
        write_madogram_csv(dir / "madogram_empirical.csv", result.empirical);
        write_madogram_csv(dir / "madogram_cnn.csv", result.cnn_curve);
        write_madogram_csv(dir / "madogram_pl.csv", result.pl_curve);
        result.mad_cnn = madogram_mad(result.cnn_curve, result.empirical);
        result.mad_pl = madogram_mad(result.pl_curve, result.empirical);
        write_json(dir / "madogram_summary.json", {{"mad_cnn", result.mad_cnn}, {"mad_pl", result.mad_pl}});
    });

    if (cfg.observed.qq_nsim > 0) {
        stages.run("qq", [&] {
            const std::uint64_t s = cfg.stage_seed("qq");
            write_qq_csv(dir / "qq_cnn.csv",
                         qq_summaries(frechet.samples, result.cnn_estimates, cfg.family, cfg.observed.qq_nsim, trunc, s));
            write_qq_csv(dir / "qq_pl.csv",
                         qq_summaries(frechet.samples, pl_est, cfg.family, cfg.observed.qq_nsim, trunc, s));
        });
    }
    stages.finish("ok");
    return result;
}

}  // namespace msinfer
