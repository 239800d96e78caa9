#include "msinfer/bundle.hpp"
#include "msinfer/cnn_estimator.hpp"
#include "msinfer/diagnostics.hpp"
#include "msinfer/error.hpp"
#include "msinfer/gev.hpp"
#include "msinfer/maxstable.hpp"
#include "msinfer/nn.hpp"
#include "msinfer/pairwise.hpp"
#include "msinfer/parallel.hpp"
#include "msinfer/pipeline.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using namespace msinfer;
namespace fs = std::filesystem;

namespace {

struct Globals {
    std::string config;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    std::string out;
};

struct GridArgs {
    std::size_t nx = 25, ny = 25;
    double extent = 20.0;

    void add(CLI::App* c) {
        c->add_option("--nx", nx, "Grid columns")->check(CLI::Range(2ul, 100000ul));
        c->add_option("--ny", ny, "Grid rows")->check(CLI::Range(2ul, 100000ul));
        c->add_option("--extent", extent, "Side length of the square domain")->check(CLI::PositiveNumber);
    }
    [[nodiscard]] Grid grid() const { return Grid(nx, ny, extent, extent); }
};

std::string require_out(const Globals& g) {
    if (g.out.empty()) fail(ErrorKind::InvalidArgument, "--out is required");
    return g.out;
}

PipelineConfig base_config(const Globals& g, bool seed_given) {
    PipelineConfig cfg;
    if (!g.config.empty()) {
        cfg = load_pipeline_config(g.config);
        if (seed_given) cfg.seed = g.seed;
    } else {
        cfg.seed = g.seed;
    }
    return cfg;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"msinfer: max-stable process simulation and parameter estimation (CNN and pairwise likelihood)"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--config", g.config, "Pipeline configuration (JSON)");
    auto* seed_opt = app.add_option("--seed", g.seed, "Master random seed");
    app.add_option("--threads", g.threads, "Worker thread cap (0 = all cores)");
    app.add_option("--out", g.out, "Output path");

    // simulate
    auto* sim = app.add_subcommand("simulate", "Simulate max-stable fields into a bundle");
    std::string sim_family = "br";
    double sim_lambda = 1.0, sim_nu = 1.0;
    std::size_t sim_n = 1;
    std::optional<double> sim_cbound;
    std::optional<std::size_t> sim_maxpts;
    GridArgs sim_grid;
    sim->add_option("--family", sim_family, "br | schlather")->check(CLI::IsMember({"br", "schlather"}));
    sim->add_option("--lambda", sim_lambda, "Range")->required();
    sim->add_option("--nu", sim_nu, "Smoothness")->required();
    sim->add_option("--n", sim_n, "Number of fields")->check(CLI::PositiveNumber);
    sim->add_option("--c-bound", sim_cbound, "Spectral bound for the stopping rule");
    sim->add_option("--max-points", sim_maxpts, "Poisson point cap per field");
    sim_grid.add(sim);

    // subsample
    auto* sub = app.add_subcommand("subsample", "Keep equally spaced rows and columns of a bundle");
    std::string sub_in;
    std::size_t sub_nx = 25, sub_ny = 25;
    sub->add_option("--in", sub_in, "Input bundle")->required();
    sub->add_option("--nx", sub_nx, "Columns to keep");
    sub->add_option("--ny", sub_ny, "Rows to keep");

    // fit-gev
    auto* gev = app.add_subcommand("fit-gev", "Block extremes and sitewise GEV fits of a series bundle");
    std::string gev_in, gev_extremes;
    std::size_t gev_blocks = 6, gev_len = 10;
    bool gev_negate = false;
    gev->add_option("--in", gev_in, "Series bundle (time slices as samples)")->required();
    gev->add_option("--blocks", gev_blocks, "Blocks per year");
    gev->add_option("--block-length", gev_len, "Time steps per block");
    gev->add_flag("--negate", gev_negate, "Fit the negated block minima");
    gev->add_option("--extremes-out", gev_extremes, "Also write the block extremes bundle");

    // to-frechet
    auto* tof = app.add_subcommand("to-frechet", "Transform block extremes to the unit Frechet scale");
    std::string tof_in, tof_gev;
    tof->add_option("--in", tof_in, "Block extremes bundle")->required();
    tof->add_option("--gev", tof_gev, "GEV parameter CSV")->required();

    // fit-pl
    auto* fpl = app.add_subcommand("fit-pl", "Pairwise-likelihood fit of every field in a bundle");
    std::string fpl_in, fpl_family = "br", fpl_estimates;
    std::optional<double> fpl_delta, fpl_cl, fpl_cn;
    std::optional<std::size_t> fpl_starts, fpl_refine;
    fpl->add_option("--in", fpl_in, "Frechet-scale bundle")->required();
    fpl->add_option("--family", fpl_family, "br | schlather")->check(CLI::IsMember({"br", "schlather"}));
    fpl->add_option("--delta", fpl_delta, "Maximum pair distance");
    fpl->add_option("--starts", fpl_starts, "Random starting values");
    fpl->add_option("--refine", fpl_refine, "Starts refined by the optimizer");
    fpl->add_option("--center-lambda", fpl_cl, "Centre of the starting values (range)");
    fpl->add_option("--center-nu", fpl_cn, "Centre of the starting values (smoothness)");
    fpl->add_option("--estimates", fpl_estimates, "Also write an estimates CSV");

    // train-cnn
    auto* tcnn = app.add_subcommand("train-cnn", "Simulate a training set and train the CNN estimator");
    std::string tc_family = "br", tc_prior_from = "box", tc_reports, tc_network = "table1", tc_save_training;
    std::vector<double> tc_lrange, tc_nrange;
    std::optional<std::size_t> tc_ntrain, tc_epochs, tc_batch;
    std::optional<double> tc_lr;
    GridArgs tc_grid;
    tcnn->add_option("--family", tc_family, "br | schlather")->check(CLI::IsMember({"br", "schlather"}));
    tcnn->add_option("--prior-from", tc_prior_from, "box | pl-reports")->check(CLI::IsMember({"box", "pl-reports"}));
    tcnn->add_option("--reports", tc_reports, "Fit reports JSON (with --prior-from pl-reports)");
    tcnn->add_option("--lambda-range", tc_lrange, "Uniform prior for lambda")->expected(2);
    tcnn->add_option("--nu-range", tc_nrange, "Uniform prior for nu")->expected(2);
    tcnn->add_option("--n-train", tc_ntrain, "Training fields");
    tcnn->add_option("--network", tc_network, "table1 | table3 | path to a spec JSON");
    tcnn->add_option("--epochs", tc_epochs, "Training epochs");
    tcnn->add_option("--batch", tc_batch, "Batch size");
    tcnn->add_option("--lr", tc_lr, "Adam learning rate");
    tcnn->add_option("--save-training", tc_save_training, "Also write the training bundle");
    tc_grid.add(tcnn);

    // estimate
    auto* est = app.add_subcommand("estimate", "Apply a trained CNN estimator to a bundle");
    std::string est_dir, est_in;
    est->add_option("--estimator", est_dir, "Estimator directory")->required();
    est->add_option("--in", est_in, "Frechet-scale bundle")->required();

    // benchmark
    auto* bench = app.add_subcommand("benchmark", "Score estimators over a scenario grid");
    std::string b_family = "br", b_scen, b_estimators = "cnn,pl", b_estimator_dir;
    std::optional<std::size_t> b_reps;
    GridArgs b_grid;
    bench->add_option("--family", b_family, "br | schlather")->check(CLI::IsMember({"br", "schlather"}));
    bench->add_option("--scenarios", b_scen, "Scenario grid JSON (default: the 16-scenario grid)");
    bench->add_option("--replicates", b_reps, "Replicates per scenario");
    bench->add_option("--estimators", b_estimators, "Comma list of cnn, pl");
    bench->add_option("--estimator", b_estimator_dir, "Trained CNN estimator directory (for cnn)");
    b_grid.add(bench);

    // madogram
    auto* mad = app.add_subcommand("madogram", "Binned F-madogram of a Frechet-scale bundle");
    std::string mad_in;
    std::size_t mad_bins = 100;
    std::optional<double> mad_max;
    mad->add_option("--in", mad_in, "Frechet-scale bundle")->required();
    mad->add_option("--bins", mad_bins, "Number of distance bins")->check(CLI::PositiveNumber);
    mad->add_option("--max-distance", mad_max, "Ignore pairs farther apart");

    // qq
    auto* qq = app.add_subcommand("qq", "Quantile comparison of field minima, means and maxima");
    std::string qq_in, qq_params, qq_family = "br";
    std::size_t qq_nsim = 200;
    qq->add_option("--in", qq_in, "Observed Frechet-scale bundle")->required();
    qq->add_option("--params", qq_params, "Per-field estimates CSV")->required();
    qq->add_option("--family", qq_family, "br | schlather")->check(CLI::IsMember({"br", "schlather"}));
    qq->add_option("--nsim", qq_nsim, "Simulations per field")->check(CLI::PositiveNumber);

    // study / observed
    auto* study = app.add_subcommand("study", "Run the simulation study described by --config");
    auto* obs = app.add_subcommand("observed", "Run the observed-data pipeline described by --config");
    std::string obs_data;
    obs->add_option("--data", obs_data, "Gridded series (or Frechet fields) bundle")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        set_max_threads(g.threads);
        const bool seed_given = seed_opt->count() > 0;

        if (sim->parsed()) {
            const Grid grid = sim_grid.grid();
            const MaxStableModel model{parse_family(sim_family), DependenceParams::checked(sim_lambda, sim_nu)};
            TruncationPolicy trunc = TruncationPolicy::defaults_for(model.family, grid);
            if (sim_cbound) trunc.c_bound = *sim_cbound;
            if (sim_maxpts) trunc.max_poisson_points = *sim_maxpts;
            const MaxStableSimulator s(model, grid, trunc);
            DatasetBundle b;
            b.meta.model = model.family;
            b.meta.seed = g.seed;
            b.samples = simulate_replicates(s, sim_n, g.seed);
            std::size_t truncated = 0;
            for (const auto& f : b.samples) truncated += f.truncated;
            if (truncated) std::cerr << "msinfer: warning: " << truncated << " field(s) hit the Poisson point cap\n";
            save_bundle(b, require_out(g));
        } else if (sub->parsed()) {
            save_bundle(subsample(load_bundle(sub_in), sub_nx, sub_ny), require_out(g));
        } else if (gev->parsed()) {
            const auto series = load_bundle(gev_in);
            const auto fits = fit_gev_sites(series, gev_len, gev_blocks, gev_negate);
            if (fits.dropped) std::cerr << "msinfer: warning: dropped " << fits.dropped << " trailing time step(s)\n";
            std::size_t failed = 0;
            for (const auto& f : fits.fits) failed += !f.converged;
            if (failed) std::cerr << "msinfer: warning: " << failed << " site fit(s) did not converge\n";
            write_gev_csv(require_out(g), series.grid(), fits.fits);
            if (!gev_extremes.empty()) save_bundle(fits.extremes, gev_extremes);
        } else if (tof->parsed()) {
            const auto ext = load_bundle(tof_in);
            save_bundle(to_frechet_bundle(ext, read_gev_csv(tof_gev, ext.grid())), require_out(g));
        } else if (fpl->parsed()) {
            PipelineConfig cfg = base_config(g, seed_given);
            const auto data = load_bundle(fpl_in);
            if (fpl_delta) cfg.pl.delta = *fpl_delta;
            if (fpl_starts) cfg.pl.n_random_starts = *fpl_starts;
            if (fpl_refine) cfg.pl.n_refined = *fpl_refine;
            if (fpl_cl) cfg.pl_center.lambda = *fpl_cl;
            if (fpl_cn) cfg.pl_center.nu = *fpl_cn;
            cfg.pl.validate();
            const auto reports = fit_pl_all(data.samples, parse_family(fpl_family), cfg.pl,
                                            DependenceParams::checked(cfg.pl_center.lambda, cfg.pl_center.nu), cfg.seed);
            write_fit_reports(require_out(g), reports);
            if (!fpl_estimates.empty()) {
                std::vector<DependenceParams> e;
                for (const auto& r : reports) e.push_back(r.estimate);
                write_estimates_csv(fpl_estimates, e);
            }
        } else if (tcnn->parsed()) {
            PipelineConfig cfg = base_config(g, seed_given);
            const Family family = parse_family(tc_family);
            const Grid grid = g.config.empty() ? tc_grid.grid() : cfg.grid;
            PriorBox prior = cfg.prior;
            if (tc_prior_from == "pl-reports") {
                if (tc_reports.empty()) fail(ErrorKind::InvalidArgument, "--prior-from pl-reports needs --reports");
                prior = prior_from_pl(read_fit_reports(tc_reports), prior.n_train);
            } else if (family == Family::Schlather && g.config.empty()) {
                prior.nu_range = {0.5, 1.8};
            }
            if (!tc_lrange.empty()) prior.lambda_range = {tc_lrange[0], tc_lrange[1]};
            if (!tc_nrange.empty()) prior.nu_range = {tc_nrange[0], tc_nrange[1]};
            if (tc_ntrain) prior.n_train = *tc_ntrain;
            prior.validate();
            NetworkSpec spec;
            if (tc_network == "table1" || tc_network == "table3") {
                spec = NetworkSpec::by_name(tc_network, grid.ny(), grid.nx());
            } else {
                std::ifstream in(tc_network);
                if (!in) fail(ErrorKind::Io, "cannot open " + tc_network);
                try {
                    spec = network_spec_from_json(nlohmann::json::parse(in));
                } catch (const nlohmann::json::exception& e) {
                    fail(ErrorKind::Schema, tc_network + ": " + e.what());
                }
            }
            if (tc_epochs) cfg.train.epochs = *tc_epochs;
            if (tc_batch) cfg.train.batch_size = *tc_batch;
            if (tc_lr) cfg.train.learning_rate = *tc_lr;
            const auto trunc = TruncationPolicy::defaults_for(family, grid);
            const auto ts = make_training_set(family, prior, grid, trunc, cfg.stage_seed("training-set"));
            if (!tc_save_training.empty()) save_bundle(ts.bundle, tc_save_training);
            RngStream rng(cfg.stage_seed("train-cnn"));
            CnnEstimator e = fit_estimator(ts.bundle, ts.outputs, spec, cfg.train, rng);
            e.prior = prior;
            save_estimator(e, require_out(g));
            std::cerr << "msinfer: trained in " << e.train_seconds << " s, final loss " << e.net.loss_trace.back()
                      << '\n';
        } else if (est->parsed()) {
            const auto e = load_estimator(est_dir);
            write_estimates_csv(require_out(g), estimate_all(e, load_bundle(est_in).samples));
        } else if (bench->parsed()) {
            PipelineConfig cfg = base_config(g, seed_given);
            const Family family = parse_family(b_family);
            const Grid grid = g.config.empty() ? b_grid.grid() : cfg.grid;
            ScenarioGrid sc = ScenarioGrid::standard(family);
            if (!b_scen.empty()) {
                std::ifstream in(b_scen);
                if (!in) fail(ErrorKind::Io, "cannot open " + b_scen);
                nlohmann::json j;
                try {
                    j = nlohmann::json::parse(in);
                } catch (const nlohmann::json::exception& e) {
                    fail(ErrorKind::Schema, b_scen + ": " + e.what());
                }
                if (!j.contains("family")) j["family"] = b_family;
                sc = scenario_grid_from_json(j);
            }
            if (b_reps) sc.replicates = *b_reps;
            sc.validate();
            std::optional<CnnEstimator> cnn;
            std::vector<NamedEstimator> estimators;
            const std::uint64_t pl_seed = cfg.stage_seed("pl");
            for (const auto& name : split_list(b_estimators)) {
                if (name == "cnn") {
                    if (b_estimator_dir.empty()) fail(ErrorKind::InvalidArgument, "cnn needs --estimator <dir>");
                    cnn = load_estimator(b_estimator_dir);
                    estimators.push_back({"cnn", [&](const std::vector<FieldSample>& f, const DependenceParams&) {
                                              std::vector<EstimateOutcome> out;
                                              for (const auto& p : estimate_all(*cnn, f)) out.push_back({p, true, {}});
                                              return out;
                                          }});
                } else if (name == "pl") {
                    estimators.push_back({"pl", [&, family](const std::vector<FieldSample>& f, const DependenceParams& t) {
                                              const auto reports = fit_pl_all(
                                                  f, family, cfg.pl, t,
                                                  mix64(pl_seed ^ std::bit_cast<std::uint64_t>(t.lambda)) ^
                                                      std::bit_cast<std::uint64_t>(t.nu));
                                              std::vector<EstimateOutcome> out;
                                              for (const auto& r : reports)
                                                  out.push_back({r.estimate, r.converged, r.converged ? "" : r.message});
                                              return out;
                                          }});
                } else {
                    fail(ErrorKind::InvalidArgument, "unknown estimator '" + name + "' (expected cnn or pl)");
                }
            }
            const auto result = run_benchmark(sc, estimators, grid, TruncationPolicy::defaults_for(family, grid),
                                              cfg.stage_seed("test"));
            write_benchmark(result, require_out(g));
        } else if (mad->parsed()) {
            write_madogram_csv(require_out(g), f_madogram(load_bundle(mad_in).samples, mad_bins, mad_max));
        } else if (qq->parsed()) {
            const auto data = load_bundle(qq_in);
            const Family family = parse_family(qq_family);
            write_qq_csv(require_out(g),
                         qq_summaries(data.samples, read_estimates_csv(qq_params), family, qq_nsim,
                                      TruncationPolicy::defaults_for(family, data.grid()), g.seed));
        } else if (study->parsed() || obs->parsed()) {
            if (g.config.empty()) fail(ErrorKind::InvalidArgument, "--config is required");
            PipelineConfig cfg = load_pipeline_config(g.config);
            if (seed_given) cfg.seed = g.seed;
            if (!g.out.empty()) cfg.output_dir = g.out;
            if (study->parsed()) {
                const auto r = run_simulation_study(cfg);
                for (const auto& c : r.benchmark.scores)
                    if (c.scale == ScoreScale::Original)
                        std::cout << c.method << ' ' << c.parameter << " rmse " << c.rmse << " mae " << c.mae << " bias "
                                  << c.bias << " (n " << c.n << ", failures " << c.failures << ")\n";
            } else {
                const auto r = run_observed_pipeline(cfg, obs_data);
                std::cout << "prior lambda [" << r.prior.lambda_range.first << ", " << r.prior.lambda_range.second
                          << "], nu [" << r.prior.nu_range.first << ", " << r.prior.nu_range.second << "]\n"
                          << "madogram MAD: cnn " << r.mad_cnn << ", pl " << r.mad_pl << '\n';
            }
            std::cout << "output: " << cfg.output_dir.string() << '\n';
        }
    } catch (const Error& e) {
        std::cerr << "msinfer: " << to_string(e.kind()) << " error: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "msinfer: io error: " << e.what() << '\n';
        return exit_code(ErrorKind::Io);
    } catch (const std::exception& e) {
        std::cerr << "msinfer: error: " << e.what() << '\n';
        return exit_code(ErrorKind::Numerical);
    }
    return 0;
}
