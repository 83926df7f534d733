#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "downscale/data.hpp"
#include "downscale/eval.hpp"
#include "downscale/rng.hpp"

using namespace downscale;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

// minimal dataset on disk: constant-free fields with a known mean/std split
DatasetManifest write_fixture_dataset(const fs::path& dir, const std::vector<float>& fill_values) {
    DatasetManifest m;
    m.name = "fixture";
    m.variables = {"t"};
    m.region = Region{45.0, 55.0, 5.0, 15.0};
    m.lat_resolution = 10.0 / 4;
    m.lon_resolution = 10.0 / 4;
    for (std::size_t i = 0; i < fill_values.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "f%02zu.grd", i);
        const std::string path = (dir / name).string();
        write_grd1(path, GridTensor::full({4, 4}, fill_values[i]));
        GridMeta meta;
        meta.variable = "t";
        meta.lat_min = 45.0;
        meta.lat_max = 55.0;
        meta.lon_min = 5.0;
        meta.lon_max = 15.0;
        meta.source = "fixture";
        write_sidecar(path, meta);
        m.sample_files.push_back(name);
        m.split_tags.push_back("train");
    }
    m.declared_count = static_cast<std::int64_t>(fill_values.size());
    save_manifest(m, (dir / "manifest.json").string());
    return load_manifest((dir / "manifest.json").string());
}

} // namespace

TEST_CASE("manifest: save/load round trip preserves order and fields") {
    const fs::path dir = fresh_dir("dsc_manifest");
    DatasetManifest m = write_fixture_dataset(dir, {0.0f, 1.0f, 2.0f});
    CHECK(m.name == "fixture");
    CHECK(m.sample_files.size() == 3);
    CHECK(m.sample_files[0].find("f00.grd") != std::string::npos);
    CHECK(m.sample_files[2].find("f02.grd") != std::string::npos);
    CHECK(m.split_tags == std::vector<std::string>{"train", "train", "train"});
    fs::remove_all(dir);
}

TEST_CASE("manifest: split_tags length mismatch rejected") {
    DatasetManifest m;
    m.name = "x";
    m.variables = {"t"};
    m.region = Region{0, 1, 0, 1};
    m.sample_files = {"a.grd", "b.grd"};
    m.split_tags = {"train"};
    CHECK_THROWS_AS(m.validate(), ParseError);
}

TEST_CASE("ingest: variable missing from manifest and missing sidecar are rejected") {
    const fs::path dir = fresh_dir("dsc_ingest");
    DatasetManifest m = write_fixture_dataset(dir, {1.0f});
    // unknown variable in the sidecar
    GridMeta meta = read_sidecar(m.sample_files[0]);
    meta.variable = "unlisted";
    write_sidecar(m.sample_files[0], meta);
    CHECK_THROWS_WITH_AS(ingest(m.sample_files[0], m), doctest::Contains("not listed"), ParseError);
    // missing sidecar
    fs::remove(sidecar_path(m.sample_files[0]));
    CHECK_THROWS_WITH_AS(ingest(m.sample_files[0], m), doctest::Contains("sidecar"), ParseError);
    fs::remove_all(dir);
}

TEST_CASE("extract_region: DACH window from a 0.25-degree global grid is 40x40") {
    GridTensor global({720, 1440});
    for (std::int64_t i = 0; i < global.numel(); ++i) global[i] = static_cast<float>(i % 997);
    const Region bounds{-90.0, 90.0, -180.0, 180.0};
    const Region dach{45.0, 55.0, 5.0, 15.0};
    GridTensor win = extract_region(global, bounds, 0.25, dach);
    CHECK(win.shape() == std::vector<int>{40, 40});
    // row 0 of the window is global row (90-55)/0.25 = 140, col (5+180)/0.25 = 740
    CHECK(win.at(0, 0) == global.at(140, 740));
    CHECK(win.at(39, 39) == global.at(179, 779));
}

TEST_CASE("extract_region: whole grid and single-cell windows") {
    GridTensor g({8, 8});
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] = static_cast<float>(i);
    const Region bounds{0.0, 8.0, 0.0, 8.0};
    GridTensor whole = extract_region(g, bounds, 1.0, bounds);
    CHECK(whole.shape() == g.shape());
    GridTensor cell = extract_region(g, bounds, 1.0, Region{7.0, 8.0, 0.0, 1.0});
    CHECK(cell.shape() == std::vector<int>{1, 1});
    CHECK(cell.at(0, 0) == g.at(0, 0)); // north-most row is row 0
}

TEST_CASE("extract_region: out-of-bounds request names the axis") {
    GridTensor g({8, 8});
    const Region bounds{0.0, 8.0, 0.0, 8.0};
    CHECK_THROWS_WITH_AS(extract_region(g, bounds, 1.0, Region{-1.0, 4.0, 0.0, 4.0}),
                         doctest::Contains("latitude"), BoundsError);
    CHECK_THROWS_WITH_AS(extract_region(g, bounds, 1.0, Region{0.0, 4.0, 5.0, 9.0}),
                         doctest::Contains("longitude"), BoundsError);
}

TEST_CASE("make_patches: counts and remainder handling") {
    GridTensor g128({128, 128});
    CHECK(make_patches(g128, 64, 64).size() == 4);
    GridTensor g130({130, 130});
    CHECK(make_patches(g130, 64, 64).size() == 4); // remainder dropped
    GridTensor g64({64, 64});
    for (std::int64_t i = 0; i < g64.numel(); ++i) g64[i] = static_cast<float>(i);
    auto one = make_patches(g64, 64, 64);
    REQUIRE(one.size() == 1);
    for (std::int64_t i = 0; i < g64.numel(); ++i) CHECK(one[0][i] == g64[i]);
    CHECK_THROWS_AS(make_patches(GridTensor({32, 32}), 64, 64), ShapeError);
}

TEST_CASE("make_patches: tiling a divisible grid reassembles exactly") {
    GridTensor g({32, 32});
    Rng rng(9);
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] = static_cast<float>(rng.normal());
    auto patches = make_patches(g, 16, 16);
    REQUIRE(patches.size() == 4);
    GridTensor back({32, 32});
    for (int ty = 0; ty < 2; ++ty)
        for (int tx = 0; tx < 2; ++tx)
            for (int y = 0; y < 16; ++y)
                for (int x = 0; x < 16; ++x)
                    back.at(ty * 16 + y, tx * 16 + x) = patches[static_cast<std::size_t>(ty * 2 + tx)].at(y, x);
    for (std::int64_t i = 0; i < g.numel(); ++i) CHECK(back[i] == g[i]);
}

TEST_CASE("synthesize_pairs: shapes and mean preservation") {
    Rng rng(10);
    GridTensor hr({64, 64});
    for (std::int64_t i = 0; i < hr.numel(); ++i) hr[i] = static_cast<float>(rng.normal());
    for (int scale : {2, 8}) {
        auto pairs = synthesize_pairs({hr}, scale, "t", "src");
        REQUIRE(pairs.size() == 1);
        CHECK(pairs[0].lr.shape() == std::vector<int>{64 / scale, 64 / scale});
        CHECK(pairs[0].hr.shape() == hr.shape());
        CHECK(std::fabs(grid_mean(pairs[0].lr) - grid_mean(pairs[0].hr)) <= 1e-6);
        CHECK(pairs[0].variable == "t");
    }
    CHECK_THROWS_AS(synthesize_pairs({GridTensor({10, 10})}, 8, "t", "s"), ShapeError);
}

TEST_CASE("compute_norm_stats: zero-field/two-field oracle and zero-variance rejection") {
    const fs::path dir = fresh_dir("dsc_stats");
    DatasetManifest m = write_fixture_dataset(dir, {0.0f, 2.0f});
    auto stats = compute_norm_stats(m, "train");
    REQUIRE(stats.count("t") == 1);
    CHECK(stats["t"].mean == doctest::Approx(1.0));
    CHECK(stats["t"].std == doctest::Approx(1.0)); // population std of {0,2} halves
    CHECK(stats["t"].n_cells == 32);

    const fs::path dir2 = fresh_dir("dsc_stats_const");
    DatasetManifest c = write_fixture_dataset(dir2, {3.0f, 3.0f});
    CHECK_THROWS_AS(compute_norm_stats(c, "train"), StatsError);
    CHECK_THROWS_AS(compute_norm_stats(m, "test"), StatsError); // empty split
    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_CASE("compute_norm_stats: normalized dataset re-measures to (0,1)") {
    const fs::path dir = fresh_dir("dsc_stats_norm");
    SynthOptions so;
    so.kind = "gaussian-bumps";
    so.n = 6;
    so.size = 32;
    so.seed = 77;
    DatasetManifest m = synth_dataset(so, dir.string());
    auto stats = compute_norm_stats(m, "train");
    const NormStats ns = stats.at("field");

    // rewrite every training sample normalized, then re-measure
    const fs::path dir2 = fresh_dir("dsc_stats_norm2");
    DatasetManifest m2 = m;
    m2.sample_files.clear();
    m2.split_tags.clear();
    int k = 0;
    for (std::size_t i = 0; i < m.sample_files.size(); ++i) {
        if (m.split_tags[i] != "train") continue;
        GridTensor g = normalize(read_grd1(m.sample_files[i]), ns);
        char name[32];
        std::snprintf(name, sizeof(name), "n%02d.grd", k++);
        const std::string path = (dir2 / name).string();
        write_grd1(path, g);
        write_sidecar(path, read_sidecar(m.sample_files[i]));
        m2.sample_files.push_back(name);
        m2.split_tags.push_back("train");
    }
    save_manifest(m2, (dir2 / "manifest.json").string());
    auto renorm = compute_norm_stats(load_manifest((dir2 / "manifest.json").string()), "train");
    CHECK(std::fabs(renorm.at("field").mean) <= 1e-5);
    CHECK(std::fabs(renorm.at("field").std - 1.0) <= 1e-5);
    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_CASE("stats file: save/load round trip") {
    const fs::path dir = fresh_dir("dsc_stats_io");
    std::map<std::string, NormStats> stats{{"t", NormStats{280.5, 15.25, 4096}}};
    const std::string path = (dir / "stats.json").string();
    save_stats(stats, path);
    auto loaded = load_stats(path);
    CHECK(loaded.at("t").mean == 280.5);
    CHECK(loaded.at("t").std == 15.25);
    CHECK(loaded.at("t").n_cells == 4096);
    fs::remove_all(dir);
}

TEST_CASE("synth_dataset: deterministic bytes, counts and split tags") {
    const fs::path d1 = fresh_dir("dsc_synth_a");
    const fs::path d2 = fresh_dir("dsc_synth_b");
    SynthOptions so;
    so.kind = "gaussian-bumps";
    so.n = 10;
    so.size = 32;
    so.seed = 123;
    DatasetManifest a = synth_dataset(so, d1.string());
    DatasetManifest b = synth_dataset(so, d2.string());
    CHECK(a.sample_files.size() == 10);
    CHECK(a.name == "synthetic-gaussian-bumps");
    CHECK(std::count(a.split_tags.begin(), a.split_tags.end(), "train") == 8);
    CHECK(std::count(a.split_tags.begin(), a.split_tags.end(), "test") == 2);
    for (std::size_t i = 0; i < a.sample_files.size(); ++i)
        CHECK(slurp(a.sample_files[i]) == slurp(b.sample_files[i]));
    CHECK(slurp((d1 / "manifest.json").string()) == slurp((d2 / "manifest.json").string()));
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST_CASE("synth_dataset: invalid options rejected") {
    const fs::path dir = fresh_dir("dsc_synth_bad");
    SynthOptions so;
    so.size = 48;
    CHECK_THROWS_WITH_AS(synth_dataset(so, dir.string()), doctest::Contains("power of two"), ConfigError);
    so.size = 32;
    so.kind = "perlin";
    CHECK_THROWS_AS(synth_dataset(so, dir.string()), ConfigError);
    so.kind = "gaussian-bumps";
    so.n = 0;
    CHECK_THROWS_AS(synth_dataset(so, dir.string()), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("synth_dataset: banded-spectrum slope matches the generator parameter") {
    const fs::path dir = fresh_dir("dsc_synth_band");
    SynthOptions so;
    so.kind = "banded-spectrum";
    so.n = 16;
    so.size = 64;
    so.seed = 9;
    so.spectral_slope = 2.5;
    DatasetManifest m = synth_dataset(so, dir.string());

    // periodogram oracle: ring-averaged |F|^2 pooled over all fields, then a
    // log-log least-squares fit over the interior of the band
    const int N = so.size;
    std::vector<double> ring_power(static_cast<std::size_t>(N), 0.0);
    std::vector<std::int64_t> ring_count(static_cast<std::size_t>(N), 0);
    for (const auto& f : m.sample_files) {
        ComplexGrid spec = fft2(read_grd1(f));
        for (int ky = 0; ky < N; ++ky) {
            for (int kx = 0; kx < N; ++kx) {
                const int fy = std::min(ky, N - ky), fx = std::min(kx, N - kx);
                const double k = std::sqrt(static_cast<double>(fy) * fy + static_cast<double>(fx) * fx);
                const int bin = static_cast<int>(std::lround(k));
                if (bin < 1 || bin >= N) continue;
                const std::size_t idx = static_cast<std::size_t>(ky) * N + kx;
                ring_power[static_cast<std::size_t>(bin)] +=
                    static_cast<double>(spec.re[idx]) * spec.re[idx] +
                    static_cast<double>(spec.im[idx]) * spec.im[idx];
                ring_count[static_cast<std::size_t>(bin)] += 1;
            }
        }
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int npts = 0;
    for (int bin = 2; bin <= 14; ++bin) { // interior of the [1, N/3] band
        REQUIRE(ring_count[static_cast<std::size_t>(bin)] > 0);
        const double x = std::log(static_cast<double>(bin));
        const double y = std::log(ring_power[static_cast<std::size_t>(bin)] /
                                  static_cast<double>(ring_count[static_cast<std::size_t>(bin)]));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++npts;
    }
    const double slope = (npts * sxy - sx * sy) / (npts * sxx - sx * sx);
    CHECK(std::fabs(-slope - so.spectral_slope) <= 0.05 * so.spectral_slope);
    fs::remove_all(dir);
}

TEST_CASE("load_pairs: patching and pair synthesis from a synthetic dataset") {
    const fs::path dir = fresh_dir("dsc_load_pairs");
    SynthOptions so;
    so.n = 5;
    so.size = 64;
    so.seed = 31;
    DatasetManifest m = synth_dataset(so, dir.string());
    auto pairs = load_pairs(m, "train", 32, 2);
    CHECK(pairs.size() == 4 * 4); // 4 train files x 4 patches of 32 from 64
    for (const auto& p : pairs) {
        CHECK(p.hr.shape() == std::vector<int>{32, 32});
        CHECK(p.lr.shape() == std::vector<int>{16, 16});
        CHECK(p.source == "synthetic-gaussian-bumps");
    }
    fs::remove_all(dir);
}
