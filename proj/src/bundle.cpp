#include "msinfer/bundle.hpp"

#include "msinfer/error.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace msinfer {

using nlohmann::json;
namespace fs = std::filesystem;

const Grid& DatasetBundle::grid() const {
    if (samples.empty()) fail(ErrorKind::Schema, "bundle has no samples");
    return samples.front().grid;
}

void DatasetBundle::validate() const {
    if (samples.empty()) fail(ErrorKind::Schema, "bundle has no samples");
    if (meta.schema_version != kBundleSchemaVersion)
        fail(ErrorKind::Schema, "unsupported bundle schema version " + std::to_string(meta.schema_version));
    const Grid& g = samples.front().grid;
    const bool with_params = samples.front().params.has_value();
    for (std::size_t k = 0; k < samples.size(); ++k) {
        const auto& s = samples[k];
        if (!(s.grid == g))
            fail(ErrorKind::Schema, "sample " + std::to_string(k) + " is on a different grid");
        if (s.values.size() != g.size())
            fail(ErrorKind::Schema, "sample " + std::to_string(k) + " has " + std::to_string(s.values.size()) +
                                        " values, grid has " + std::to_string(g.size()) + " sites");
        if (s.params.has_value() != with_params)
            fail(ErrorKind::Schema, "params present on some samples but not all");
        if (s.model != meta.model)
            fail(ErrorKind::Schema, "sample " + std::to_string(k) + " model disagrees with bundle metadata");
    }
}

BundlePaths bundle_paths(const fs::path& path) {
    std::string base = path.string();
    for (const std::string suffix : {".meta.json", ".bin"}) {
        if (base.size() > suffix.size() && base.ends_with(suffix)) {
            base.resize(base.size() - suffix.size());
            break;
        }
    }
    return {fs::path(base + ".bin"), fs::path(base + ".meta.json")};
}

void write_f64_le(const fs::path& path, const std::vector<double>& values) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
    std::vector<unsigned char> buf(values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint64_t bits = std::bit_cast<std::uint64_t>(values[i]);
        for (int b = 0; b < 8; ++b) buf[i * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

std::vector<double> read_f64_le(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() % 8 != 0)
        fail(ErrorKind::CorruptFile, path.string() + ": size " + std::to_string(buf.size()) +
                                         " is not a multiple of 8");
    std::vector<double> values(buf.size() / 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[i * 8 + b]) << (8 * b);
        values[i] = std::bit_cast<double>(bits);
    }
    return values;
}

void save_bundle(const DatasetBundle& bundle, const fs::path& path) {
    bundle.validate();
    const auto paths = bundle_paths(path);
    const Grid& g = bundle.grid();

    std::vector<double> payload;
    payload.reserve(bundle.samples.size() * g.size());
    for (const auto& s : bundle.samples) payload.insert(payload.end(), s.values.begin(), s.values.end());

    json meta;
    meta["schema_version"] = bundle.meta.schema_version;
    meta["model"] = bundle.meta.model ? json(std::string(to_string(*bundle.meta.model))) : json(nullptr);
    meta["nx"] = g.nx();
    meta["ny"] = g.ny();
    meta["extent"] = {g.extent_x(), g.extent_y()};
    meta["n_samples"] = bundle.samples.size();
    meta["seed"] = bundle.meta.seed;
    meta["role"] = bundle.meta.role;
    meta["scale"] = bundle.meta.scale;
    const bool with_params = bundle.samples.front().params.has_value();
    meta["params_present"] = with_params;
    if (with_params) {
        json params = json::array();
        for (const auto& s : bundle.samples) params.push_back({s.params->lambda, s.params->nu});
        meta["params"] = std::move(params);
    }
    if (bundle.meta.param_ranges) {
        const auto& r = *bundle.meta.param_ranges;
        meta["param_ranges"] = {{"lambda", {r.lambda.first, r.lambda.second}},
                                {"nu", {r.nu.first, r.nu.second}}};
    }
    json seeds = json::array();
    json truncated = json::array();
    for (const auto& s : bundle.samples) {
        seeds.push_back(s.seed ? json(*s.seed) : json(nullptr));
        truncated.push_back(s.truncated);
    }
    meta["sample_seeds"] = std::move(seeds);
    meta["truncated"] = std::move(truncated);

    write_f64_le(paths.bin, payload);
    std::ofstream out(paths.meta, std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open " + paths.meta.string() + " for writing");
    out << meta.dump(2) << '\n';
    if (!out) fail(ErrorKind::Io, "write failed: " + paths.meta.string());
}

DatasetBundle load_bundle(const fs::path& path) {
    const auto paths = bundle_paths(path);
    std::ifstream in(paths.meta);
    if (!in) fail(ErrorKind::Io, "cannot open " + paths.meta.string());

    json meta;
    try {
        meta = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorKind::CorruptFile, paths.meta.string() + ": " + e.what());
    }

    DatasetBundle bundle;
    std::size_t n = 0;
    std::optional<Grid> grid;
    try {
        bundle.meta.schema_version = meta.at("schema_version").get<int>();
        if (bundle.meta.schema_version != kBundleSchemaVersion)
            fail(ErrorKind::Schema, paths.meta.string() + ": schema version " +
                                        std::to_string(bundle.meta.schema_version) + ", expected " +
                                        std::to_string(kBundleSchemaVersion));
        if (!meta.at("model").is_null()) bundle.meta.model = parse_family(meta["model"].get<std::string>());
        bundle.meta.seed = meta.at("seed").get<std::uint64_t>();
        bundle.meta.role = meta.value("role", std::string("fields"));
        bundle.meta.scale = meta.value("scale", std::string("frechet"));
        if (meta.contains("param_ranges")) {
            const auto& r = meta["param_ranges"];
            bundle.meta.param_ranges = ParamRanges{{r.at("lambda").at(0).get<double>(), r.at("lambda").at(1).get<double>()},
                                                   {r.at("nu").at(0).get<double>(), r.at("nu").at(1).get<double>()}};
        }
        n = meta.at("n_samples").get<std::size_t>();
        grid.emplace(meta.at("nx").get<std::size_t>(), meta.at("ny").get<std::size_t>(),
                     meta.at("extent").at(0).get<double>(), meta.at("extent").at(1).get<double>());
    } catch (const json::exception& e) {
        fail(ErrorKind::Schema, paths.meta.string() + ": " + e.what());
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::InvalidArgument) fail(ErrorKind::Schema, paths.meta.string() + ": " + e.what());
        throw;
    }
    if (n == 0) fail(ErrorKind::Schema, paths.meta.string() + ": bundle has no samples");

    const std::vector<double> payload = read_f64_le(paths.bin);
    const std::size_t d = grid->size();
    if (payload.size() != n * d)
        fail(ErrorKind::CorruptFile, paths.bin.string() + ": expected " + std::to_string(n * d) +
                                         " values, found " + std::to_string(payload.size()));

    try {
        const bool with_params = meta.at("params_present").get<bool>();
        if (with_params && meta.at("params").size() != n)
            fail(ErrorKind::Schema, paths.meta.string() + ": params array length does not match n_samples");
        const json seeds = meta.value("sample_seeds", json::array());
        const json truncated = meta.value("truncated", json::array());
        if ((!seeds.empty() && seeds.size() != n) || (!truncated.empty() && truncated.size() != n))
            fail(ErrorKind::Schema, paths.meta.string() + ": per-sample metadata length mismatch");

        bundle.samples.reserve(n);
        for (std::size_t k = 0; k < n; ++k) {
            FieldSample s{*grid, std::vector<double>(payload.begin() + static_cast<std::ptrdiff_t>(k * d),
                                                     payload.begin() + static_cast<std::ptrdiff_t>((k + 1) * d)),
                          bundle.meta.model, std::nullopt, std::nullopt, false};
            if (with_params) {
                const auto& p = meta["params"][k];
                if (p.size() != 2) fail(ErrorKind::Schema, paths.meta.string() + ": params rows must have 2 entries");
                s.params = DependenceParams{p[0].get<double>(), p[1].get<double>()};
            }
            if (!seeds.empty() && !seeds[k].is_null()) s.seed = seeds[k].get<std::uint64_t>();
            if (!truncated.empty()) s.truncated = truncated[k].get<bool>();
            bundle.samples.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::Schema, paths.meta.string() + ": " + e.what());
    }
    return bundle;
}

}  // namespace msinfer
