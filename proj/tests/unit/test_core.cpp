#include "support.hpp"

#include "msinfer/bundle.hpp"
#include "msinfer/error.hpp"
#include "msinfer/grid.hpp"
#include "msinfer/parallel.hpp"
#include "msinfer/rng.hpp"
#include "msinfer/types.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>

using namespace msinfer;

TEST_CASE("grid spacing and sites") {
    const Grid g = make_grid(25, 25, {20.0, 20.0});
    CHECK(g.spacing_x() == doctest::Approx(20.0 / 24.0));
    CHECK(g.spacing_y() == doctest::Approx(0.833333).epsilon(1e-6));
    CHECK(g.site(12, 12).x == doctest::Approx(10.0));
    CHECK(g.site(12, 12).y == doctest::Approx(10.0));
    CHECK(g.site(0, 0).x == 0.0);
    CHECK(g.site(24, 24).x == 20.0);
    CHECK(g.site(24, 24).y == 20.0);
    CHECK(g.size() == 625);
    CHECK(g.index(3, 2) == 2 * 25 + 3);
    CHECK(g.site(g.index(3, 2)).x == doctest::Approx(3 * 20.0 / 24.0));
}

TEST_CASE("2x2 grid corners") {
    const Grid g = make_grid(2, 2, {1.0, 1.0});
    CHECK(g.site(0).x == 0.0);
    CHECK(g.site(0).y == 0.0);
    CHECK(g.site(1).x == 1.0);
    CHECK(g.site(1).y == 0.0);
    CHECK(g.site(2).x == 0.0);
    CHECK(g.site(2).y == 1.0);
    CHECK(g.site(3).x == 1.0);
    CHECK(g.site(3).y == 1.0);
    CHECK(g.distance(0, 3) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("grid rejects bad dimensions") {
    CHECK_THROWS_KIND(make_grid(1, 5, {1.0, 1.0}), ErrorKind::InvalidArgument);
    CHECK_THROWS_KIND(make_grid(5, 5, {0.0, 1.0}), ErrorKind::InvalidArgument);
    CHECK_THROWS_KIND(make_grid(5, 5, {1.0, -2.0}), ErrorKind::InvalidArgument);
    CHECK_THROWS_KIND(make_grid(5, 5, {1.0, NAN}), ErrorKind::InvalidArgument);
}

TEST_CASE("family names and params") {
    CHECK(to_string(Family::BrownResnick) == "br");
    CHECK(parse_family("schlather") == Family::Schlather);
    CHECK_THROWS_KIND(parse_family("gauss"), ErrorKind::InvalidArgument);
    CHECK(DependenceParams{1.0, 2.0}.valid());
    CHECK_FALSE(DependenceParams{1.0, 2.01}.valid());
    CHECK_FALSE(DependenceParams{0.0, 1.0}.valid());
    CHECK_FALSE(DependenceParams{1.0, 0.0}.valid());
    CHECK_THROWS_KIND(DependenceParams::checked(-1.0, 1.0), ErrorKind::InvalidArgument);
}

TEST_CASE("error kinds map to exit codes") {
    CHECK(exit_code(ErrorKind::InvalidArgument) == 2);
    CHECK(exit_code(ErrorKind::Schema) == 2);
    CHECK(exit_code(ErrorKind::Numerical) == 3);
    CHECK(exit_code(ErrorKind::Diverged) == 3);
    CHECK(exit_code(ErrorKind::Io) == 4);
    CHECK(exit_code(ErrorKind::CorruptFile) == 4);
    CHECK(std::string(to_string(ErrorKind::CorruptFile)) == "corrupt-file");
}

TEST_CASE("rng streams are keyed by seed and stream id") {
    RngStream a(42, 7), b(42, 7), c(42, 8), d(43, 7);
    std::vector<std::uint64_t> va, vb, vc, vd;
    for (int i = 0; i < 16; ++i) {
        va.push_back(a.next_u64());
        vb.push_back(b.next_u64());
        vc.push_back(c.next_u64());
        vd.push_back(d.next_u64());
    }
    CHECK(va == vb);
    CHECK(va != vc);
    CHECK(va != vd);

    RngStream root(5);
    RngStream s1 = root.split(3), s2 = RngStream(5).split(3);
    root.next_u64();
    RngStream s3 = root.split(3);  // split does not depend on consumption
    CHECK(s1.next_u64() == s2.next_u64());
    CHECK(RngStream(5).split(3).next_u64() == s3.next_u64());
    CHECK(RngStream(5).split(3).next_u64() != RngStream(5).split(4).next_u64());
}

TEST_CASE("rng distributions") {
    RngStream r(1);
    double su = 0, sn = 0, sn2 = 0, se = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = r.uniform01();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        su += u;
        const double z = r.normal();
        sn += z;
        sn2 += z * z;
        se += r.exponential();
    }
    CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
    CHECK(std::abs(sn / n) < 0.01);
    CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.02));
    CHECK(se / n == doctest::Approx(1.0).epsilon(0.02));
    std::set<std::size_t> seen;
    for (int i = 0; i < 1000; ++i) seen.insert(r.uniform_index(5));
    CHECK(seen == std::set<std::size_t>{0, 1, 2, 3, 4});
}

TEST_CASE("parallel_for results do not depend on thread count") {
    auto run = [](unsigned threads) {
        set_max_threads(threads);
        std::vector<std::uint64_t> out(257);
        parallel_for(out.size(), [&](std::size_t i) {
            RngStream r = RngStream(9).split(i);
            std::uint64_t acc = 0;
            for (int k = 0; k < 100; ++k) acc ^= r.next_u64();
            out[i] = acc;
        });
        return out;
    };
    const auto one = run(1);
    CHECK(one == run(4));
    CHECK(one == run(0));
    set_max_threads(1);
}

TEST_CASE("parallel_for rethrows the lowest failing index") {
    set_max_threads(4);
    try {
        parallel_for(100, [](std::size_t i) {
            if (i == 17 || i == 60) throw std::runtime_error("item " + std::to_string(i));
        });
        FAIL("no exception");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()) == "item 17");
    }
    set_max_threads(1);
}

namespace {

DatasetBundle three_samples() {
    const Grid g(4, 3, 2.0, 1.5);
    DatasetBundle b;
    b.meta.model = Family::Schlather;
    b.meta.seed = 99;
    b.meta.param_ranges = ParamRanges{{0.1, 3.0}, {0.5, 1.9}};
    RngStream r(3);
    for (int k = 0; k < 3; ++k) {
        std::vector<double> v(g.size());
        for (auto& x : v) x = std::exp(r.normal()) * 1e-3 + r.uniform01() * 1e17;
        b.samples.push_back(FieldSample{g, v, Family::Schlather, DependenceParams{0.1 * (k + 1), 1.0 / 3.0},
                                        std::uint64_t{1} << (60 + k), k == 1});
    }
    return b;
}

}  // namespace

TEST_CASE("bundle round trip is bit exact") {
    testing::TempDir dir("core");
    const DatasetBundle b = three_samples();
    save_bundle(b, dir / "b");
    CHECK(std::filesystem::exists(dir / "b.bin"));
    CHECK(std::filesystem::exists(dir / "b.meta.json"));
    CHECK(std::filesystem::file_size(dir / "b.bin") == 3 * 12 * 8);
    const DatasetBundle back = load_bundle(dir / "b.meta.json");
    CHECK(back == b);

    std::ifstream in(dir / "b.meta.json");
    const auto meta = nlohmann::json::parse(in);
    for (const char* key : {"schema_version", "model", "nx", "ny", "extent", "n_samples", "seed",
                            "params_present", "params"})
        CHECK_MESSAGE(meta.contains(key), key);
    CHECK(meta["nx"] == 4);
    CHECK(meta["ny"] == 3);
}

TEST_CASE("bundle without params or model") {
    testing::TempDir dir("core");
    DatasetBundle b;
    b.meta.role = "series";
    b.meta.scale = "raw";
    b.samples.push_back(FieldSample{Grid(2, 2, 1, 1), {1, -2, 3, -4}, std::nullopt, std::nullopt, std::nullopt, false});
    save_bundle(b, dir / "s");
    CHECK(load_bundle(dir / "s") == b);
}

TEST_CASE("bundle payload is little endian float64, sample major") {
    testing::TempDir dir("core");
    DatasetBundle b;
    b.samples.push_back(FieldSample{Grid(2, 2, 1, 1), {1.0, 2.0, 3.0, 4.0}, std::nullopt, std::nullopt, std::nullopt, false});
    b.samples.push_back(FieldSample{Grid(2, 2, 1, 1), {5.0, 6.0, 7.0, 8.0}, std::nullopt, std::nullopt, std::nullopt, false});
    save_bundle(b, dir / "x");
    std::ifstream in(dir / "x.bin", std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    REQUIRE(bytes.size() == 64);
    // 6.0 = 0x4018000000000000, sixth value
    CHECK(bytes[5 * 8 + 7] == 0x40);
    CHECK(bytes[5 * 8 + 6] == 0x18);
    CHECK(bytes[5 * 8 + 0] == 0x00);
}

TEST_CASE("truncated payload is a corrupt file") {
    testing::TempDir dir("core");
    save_bundle(three_samples(), dir / "b");
    std::filesystem::resize_file(dir / "b.bin", 3 * 12 * 8 - 8);
    CHECK_THROWS_KIND(load_bundle(dir / "b"), ErrorKind::CorruptFile);
    std::filesystem::resize_file(dir / "b.bin", 13);
    CHECK_THROWS_KIND(load_bundle(dir / "b"), ErrorKind::CorruptFile);
}

TEST_CASE("bundle schema violations") {
    testing::TempDir dir("core");
    DatasetBundle mixed = three_samples();
    mixed.samples[2].grid = Grid(3, 4, 2.0, 1.5);
    mixed.samples[2].values.resize(12);
    CHECK_THROWS_KIND(save_bundle(mixed, dir / "m"), ErrorKind::Schema);

    DatasetBundle partial = three_samples();
    partial.samples[1].params.reset();
    CHECK_THROWS_KIND(partial.validate(), ErrorKind::Schema);

    CHECK_THROWS_KIND(DatasetBundle{}.validate(), ErrorKind::Schema);

    save_bundle(three_samples(), dir / "b");
    auto edit = [&](auto&& f) {
        nlohmann::json meta;
        {
            std::ifstream in(dir / "b.meta.json");
            meta = nlohmann::json::parse(in);
        }
        f(meta);
        std::ofstream(dir / "c.meta.json") << meta.dump();
        std::filesystem::copy_file(dir / "b.bin", dir / "c.bin", std::filesystem::copy_options::overwrite_existing);
    };
    edit([](auto& m) { m["schema_version"] = 99; });
    CHECK_THROWS_KIND(load_bundle(dir / "c"), ErrorKind::Schema);
    edit([](auto& m) { m["params"].erase(0); });
    CHECK_THROWS_KIND(load_bundle(dir / "c"), ErrorKind::Schema);
    edit([](auto& m) { m["nx"] = 1; });
    CHECK_THROWS_KIND(load_bundle(dir / "c"), ErrorKind::Schema);
    edit([](auto& m) { m.erase("model"); });
    CHECK_THROWS_KIND(load_bundle(dir / "c"), ErrorKind::Schema);

    std::ofstream(dir / "c.meta.json") << "{ not json";
    CHECK_THROWS_KIND(load_bundle(dir / "c"), ErrorKind::CorruptFile);
    CHECK_THROWS_KIND(load_bundle(dir / "missing"), ErrorKind::Io);
}

TEST_CASE("bundle paths strip known suffixes") {
    CHECK(bundle_paths("a/b.bin").meta == std::filesystem::path("a/b.meta.json"));
    CHECK(bundle_paths("a/b.meta.json").bin == std::filesystem::path("a/b.bin"));
    CHECK(bundle_paths("a/b").bin == std::filesystem::path("a/b.bin"));
}
