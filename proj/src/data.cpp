#include "downscale/data.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "downscale/rng.hpp"

namespace fs = std::filesystem;

namespace downscale {

void DatasetManifest::validate() const {
    if (name.empty()) throw ParseError("manifest: empty product name");
    if (sample_files.empty()) throw ParseError("manifest '" + name + "': sample_files must be non-empty");
    if (split_tags.size() != sample_files.size())
        throw ParseError("manifest '" + name + "': split_tags length " + std::to_string(split_tags.size()) +
                         " != sample_files length " + std::to_string(sample_files.size()));
    if (variables.empty()) throw ParseError("manifest '" + name + "': variables must be non-empty");
    region.validate();
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    nlohmann::json j{{"name", m.name},
                     {"variables", m.variables},
                     {"lat_resolution", m.lat_resolution},
                     {"lon_resolution", m.lon_resolution},
                     {"region", {{"lat_min", m.region.lat_min},
                                 {"lat_max", m.region.lat_max},
                                 {"lon_min", m.region.lon_min},
                                 {"lon_max", m.region.lon_max}}},
                     {"sample_files", m.sample_files},
                     {"split_tags", m.split_tags},
                     {"declared_count", m.declared_count}};
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open manifest " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    DatasetManifest m;
    try {
        m.name = j.at("name").get<std::string>();
        m.variables = j.at("variables").get<std::vector<std::string>>();
        m.lat_resolution = j.value("lat_resolution", 0.0);
        m.lon_resolution = j.value("lon_resolution", 0.0);
        const auto& r = j.at("region");
        m.region = Region{r.at("lat_min").get<double>(), r.at("lat_max").get<double>(),
                          r.at("lon_min").get<double>(), r.at("lon_max").get<double>()};
        m.sample_files = j.at("sample_files").get<std::vector<std::string>>();
        m.split_tags = j.at("split_tags").get<std::vector<std::string>>();
        m.declared_count = j.value("declared_count", std::int64_t{0});
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    m.validate();
    const fs::path dir = fs::path(path).parent_path();
    for (auto& f : m.sample_files)
        if (fs::path(f).is_relative()) f = (dir / f).string();
    return m;
}

GridTensor ingest(const std::string& path, const DatasetManifest& manifest, GridMeta* meta_out) {
    GridTensor grid = read_grd1(path);
    GridMeta meta = read_sidecar(path);
    if (std::find(manifest.variables.begin(), manifest.variables.end(), meta.variable) ==
        manifest.variables.end())
        throw ParseError(path + ": sidecar variable '" + meta.variable + "' not listed in manifest '" +
                         manifest.name + "'");
    const Region bounds{meta.lat_min, meta.lat_max, meta.lon_min, meta.lon_max};
    bounds.validate();
    if (!manifest.region.contains(bounds))
        throw ParseError(path + ": sample bounds outside the manifest region");
    if (!grid.all_finite()) throw ParseError(path + ": non-finite values in payload");
    if (meta_out) *meta_out = meta;
    return grid;
}

GridTensor extract_region(const GridTensor& grid, const Region& grid_bounds, double cell_size,
                          const Region& want) {
    grid_bounds.validate();
    want.validate();
    if (cell_size <= 0.0) throw BoundsError("cell_size must be > 0");
    if (want.lat_min < grid_bounds.lat_min || want.lat_max > grid_bounds.lat_max)
        throw BoundsError("requested latitude range [" + std::to_string(want.lat_min) + ", " +
                          std::to_string(want.lat_max) + "] outside the grid");
    if (want.lon_min < grid_bounds.lon_min || want.lon_max > grid_bounds.lon_max)
        throw BoundsError("requested longitude range [" + std::to_string(want.lon_min) + ", " +
                          std::to_string(want.lon_max) + "] outside the grid");

    const int H = grid.height(), W = grid.width();
    // rows run north to south from lat_max
    const double fuzz = 1e-9;
    int r0 = static_cast<int>(std::floor((grid_bounds.lat_max - want.lat_max) / cell_size + fuzz));
    int r1 = static_cast<int>(std::ceil((grid_bounds.lat_max - want.lat_min) / cell_size - fuzz));
    int c0 = static_cast<int>(std::floor((want.lon_min - grid_bounds.lon_min) / cell_size + fuzz));
    int c1 = static_cast<int>(std::ceil((want.lon_max - grid_bounds.lon_min) / cell_size - fuzz));
    r0 = std::clamp(r0, 0, H);
    r1 = std::clamp(r1, 0, H);
    c0 = std::clamp(c0, 0, W);
    c1 = std::clamp(c1, 0, W);
    if (r1 <= r0) throw BoundsError("empty latitude window");
    if (c1 <= c0) throw BoundsError("empty longitude window");

    std::vector<int> shape = grid.shape();
    shape[shape.size() - 2] = r1 - r0;
    shape[shape.size() - 1] = c1 - c0;
    GridTensor out(shape);
    const std::int64_t plane_in = static_cast<std::int64_t>(H) * W;
    const std::int64_t plane_out = static_cast<std::int64_t>(r1 - r0) * (c1 - c0);
    for (std::int64_t p = 0; p < grid.planes(); ++p)
        for (int r = r0; r < r1; ++r)
            std::copy(grid.data() + p * plane_in + static_cast<std::int64_t>(r) * W + c0,
                      grid.data() + p * plane_in + static_cast<std::int64_t>(r) * W + c1,
                      out.data() + p * plane_out + static_cast<std::int64_t>(r - r0) * (c1 - c0));
    return out;
}

std::vector<GridTensor> make_patches(const GridTensor& grid, int patch, int stride) {
    if (patch < 1) throw ShapeError("patch must be >= 1");
    if (stride < 1) stride = patch;
    if (grid.rank() != 2) throw ShapeError("make_patches expects a 2-D field, got " + grid.shape_str());
    const int H = grid.height(), W = grid.width();
    if (patch > H || patch > W)
        throw ShapeError("patch " + std::to_string(patch) + " larger than grid " + grid.shape_str());
    std::vector<GridTensor> out;
    for (int y = 0; y + patch <= H; y += stride) {
        for (int x = 0; x + patch <= W; x += stride) {
            GridTensor p({patch, patch});
            for (int r = 0; r < patch; ++r)
                std::copy(grid.data() + static_cast<std::int64_t>(y + r) * W + x,
                          grid.data() + static_cast<std::int64_t>(y + r) * W + x + patch,
                          p.data() + static_cast<std::int64_t>(r) * patch);
            out.push_back(std::move(p));
        }
    }
    return out;
}

std::vector<SamplePair> synthesize_pairs(const std::vector<GridTensor>& hr_patches, int scale,
                                         const std::string& variable, const std::string& source) {
    if (scale < 1) throw ShapeError("scale must be >= 1");
    std::vector<SamplePair> out;
    out.reserve(hr_patches.size());
    for (const GridTensor& hr : hr_patches) {
        SamplePair sp;
        sp.lr = avg_pool(hr, scale);
        sp.hr = hr;
        sp.variable = variable;
        sp.source = source;
        sp.scale = scale;
        out.push_back(std::move(sp));
    }
    return out;
}

std::map<std::string, NormStats> compute_norm_stats(const DatasetManifest& manifest,
                                                    const std::string& split) {
    struct Acc {
        double sum = 0.0, sq = 0.0;
        std::int64_t n = 0;
    };
    std::map<std::string, Acc> acc;
    bool any = false;
    for (std::size_t i = 0; i < manifest.sample_files.size(); ++i) {
        if (manifest.split_tags[i] != split) continue;
        any = true;
        GridMeta meta;
        GridTensor g = ingest(manifest.sample_files[i], manifest, &meta);
        Acc& a = acc[meta.variable];
        for (std::int64_t k = 0; k < g.numel(); ++k) {
            a.sum += g[k];
            a.sq += static_cast<double>(g[k]) * g[k];
        }
        a.n += g.numel();
    }
    if (!any) throw StatsError("split '" + split + "' is empty in manifest '" + manifest.name + "'");

    std::map<std::string, NormStats> out;
    for (const auto& [var, a] : acc) {
        const double mean = a.sum / static_cast<double>(a.n);
        const double var_ = a.sq / static_cast<double>(a.n) - mean * mean;
        if (!(var_ > 1e-12))
            throw StatsError("zero variance for variable '" + var + "' in split '" + split + "'");
        out[var] = NormStats{mean, std::sqrt(var_), a.n};
    }
    return out;
}

void save_stats(const std::map<std::string, NormStats>& stats, const std::string& path) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [var, s] : stats)
        j[var] = {{"mean", s.mean}, {"std", s.std}, {"n_cells", s.n_cells}};
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << j.dump(2) << "\n";
}

std::map<std::string, NormStats> load_stats(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open stats file " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    std::map<std::string, NormStats> out;
    for (auto it = j.begin(); it != j.end(); ++it) {
        NormStats s{it.value().at("mean").get<double>(), it.value().at("std").get<double>(),
                    it.value().value("n_cells", std::int64_t{0})};
        s.validate();
        out[it.key()] = s;
    }
    return out;
}

// --- synthetic generator ------------------------------------------------------------

namespace {

GridTensor gen_bumps(int size, Rng& rng, bool anisotropic) {
    GridTensor f({size, size});
    // slow affine background so the field has large-scale variance
    const double b0 = rng.uniform(-0.5, 0.5);
    const double bx = rng.uniform(-0.5, 0.5);
    const double by = rng.uniform(-0.5, 0.5);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            f.at(y, x) = static_cast<float>(b0 + bx * x / size + by * y / size);

    const int bumps = 8;
    for (int j = 0; j < bumps; ++j) {
        const double cx = rng.uniform(0.0, size);
        const double cy = rng.uniform(0.0, size);
        const double amp = rng.uniform(-2.0, 2.0);
        double s_major, s_minor, theta;
        if (anisotropic) {
            s_major = rng.uniform(4.0, size / 6.0);
            s_minor = rng.uniform(1.0, 2.5);
            theta = rng.uniform(0.0, M_PI);
        } else {
            s_major = s_minor = rng.uniform(1.5, 3.0);
            theta = 0.0;
        }
        const double ct = std::cos(theta), st = std::sin(theta);
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double dx = x - cx, dy = y - cy;
                const double u = ct * dx + st * dy;
                const double v = -st * dx + ct * dy;
                const double e = u * u / (2.0 * s_major * s_major) + v * v / (2.0 * s_minor * s_minor);
                if (e < 30.0) f.at(y, x) += static_cast<float>(amp * std::exp(-e));
            }
        }
    }

    // band-limited wave texture; the two kinds use disjoint bands and
    // amplitudes, which is most of the cross-kind distribution gap
    const int f_lo = std::max(2, anisotropic ? size / 16 : 3 * size / 32);
    const int f_hi = std::max(f_lo + 1, anisotropic ? size / 8 : 7 * size / 32);
    const int waves = 6;
    for (int j = 0; j < waves; ++j) {
        const int fy = (f_lo + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(f_hi - f_lo + 1)))) *
                       (rng.uniform_int(2) ? 1 : -1);
        const int fx = f_lo + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(f_hi - f_lo + 1)));
        const double amp = rng.uniform(anisotropic ? 0.3 : 0.2, anisotropic ? 0.7 : 0.5) *
                           (rng.uniform_int(2) ? 1.0 : -1.0);
        const double phase = rng.uniform(0.0, 2.0 * M_PI);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                f.at(y, x) += static_cast<float>(
                    amp * std::sin(2.0 * M_PI * (static_cast<double>(fy) * y + static_cast<double>(fx) * x) / size +
                                   phase));
    }
    return f;
}

GridTensor gen_banded_spectrum(int size, Rng& rng, double slope) {
    const int H = size, W = size;
    const double band_max = size / 3.0;
    // normalize so E|field|^2 == 1
    double power_sum = 0.0;
    for (int ky = 0; ky < H; ++ky) {
        for (int kx = 0; kx < W; ++kx) {
            const int fy = std::min(ky, H - ky), fx = std::min(kx, W - kx);
            const double k = std::sqrt(static_cast<double>(fy) * fy + static_cast<double>(fx) * fx);
            if (k >= 1.0 && k <= band_max) power_sum += std::pow(k, -slope);
        }
    }
    const double amp0 = static_cast<double>(H) * W / std::sqrt(power_sum);

    ComplexGrid spec({H, W});
    for (int ky = 0; ky < H; ++ky) {
        for (int kx = 0; kx < W; ++kx) {
            const int my = (H - ky) % H, mx = (W - kx) % W;
            if (std::make_pair(ky, kx) > std::make_pair(my, mx)) continue; // fill each conjugate pair once
            const int fy = std::min(ky, H - ky), fx = std::min(kx, W - kx);
            const double k = std::sqrt(static_cast<double>(fy) * fy + static_cast<double>(fx) * fx);
            if (k < 1.0 || k > band_max) continue;
            const double amp = amp0 * std::pow(k, -slope / 2.0);
            const std::size_t idx = static_cast<std::size_t>(ky) * W + kx;
            const std::size_t midx = static_cast<std::size_t>(my) * W + mx;
            if (idx == midx) { // self-conjugate mode: real
                spec.re[idx] = static_cast<float>(amp * rng.normal());
                spec.im[idx] = 0.0f;
            } else {
                const double zr = rng.normal() / std::sqrt(2.0), zi = rng.normal() / std::sqrt(2.0);
                spec.re[idx] = static_cast<float>(amp * zr);
                spec.im[idx] = static_cast<float>(amp * zi);
                spec.re[midx] = spec.re[idx];
                spec.im[midx] = -spec.im[idx];
            }
        }
    }
    return ifft2(spec);
}

std::string day_timestamp(int day_index) {
    using namespace std::chrono;
    const year_month_day base{year{2015}, month{1}, day{1}};
    const year_month_day ymd{sys_days{base} + days{day_index}};
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT00:00:00Z", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

} // namespace

DatasetManifest synth_dataset(const SynthOptions& opt, const std::string& out_dir) {
    if (opt.n < 1) throw ConfigError("n must be >= 1");
    if (!is_power_of_two(opt.size)) throw ConfigError("size must be a power of two, got " + std::to_string(opt.size));
    if (opt.kind != "gaussian-bumps" && opt.kind != "anisotropic-bumps" && opt.kind != "banded-spectrum")
        throw ConfigError("unknown kind '" + opt.kind +
                          "' (valid: gaussian-bumps, anisotropic-bumps, banded-spectrum)");
    opt.region.validate();
    if (!(opt.train_fraction > 0.0 && opt.train_fraction <= 1.0))
        throw ConfigError("train_fraction must be in (0, 1]");

    fs::create_directories(out_dir);
    DatasetManifest m;
    m.name = "synthetic-" + opt.kind;
    m.variables = {opt.variable};
    m.region = opt.region;
    m.lat_resolution = (opt.region.lat_max - opt.region.lat_min) / opt.size;
    m.lon_resolution = (opt.region.lon_max - opt.region.lon_min) / opt.size;
    m.declared_count = opt.n;

    const int n_train = std::max(1, static_cast<int>(std::floor(opt.train_fraction * opt.n)));
    for (int i = 0; i < opt.n; ++i) {
        Rng rng(mix_seed(opt.seed, static_cast<std::uint64_t>(i)));
        GridTensor field;
        if (opt.kind == "banded-spectrum")
            field = gen_banded_spectrum(opt.size, rng, opt.spectral_slope);
        else
            field = gen_bumps(opt.size, rng, opt.kind == "anisotropic-bumps");

        char name[64];
        std::snprintf(name, sizeof(name), "sample_%05d.grd", i);
        const std::string path = (fs::path(out_dir) / name).string();
        write_grd1(path, field);
        GridMeta meta;
        meta.variable = opt.variable;
        meta.units = "1";
        meta.lat_min = opt.region.lat_min;
        meta.lat_max = opt.region.lat_max;
        meta.lon_min = opt.region.lon_min;
        meta.lon_max = opt.region.lon_max;
        meta.source = m.name;
        meta.timestamp = day_timestamp(i);
        write_sidecar(path, meta);
        m.sample_files.push_back(name);
        m.split_tags.push_back(i < n_train ? "train" : "test");
    }
    save_manifest(m, (fs::path(out_dir) / "manifest.json").string());
    for (auto& f : m.sample_files) f = (fs::path(out_dir) / f).string();
    return m;
}

std::vector<SamplePair> load_pairs(const DatasetManifest& manifest, const std::string& split,
                                   int patch, int scale) {
    std::vector<SamplePair> out;
    for (std::size_t i = 0; i < manifest.sample_files.size(); ++i) {
        if (manifest.split_tags[i] != split) continue;
        GridMeta meta;
        GridTensor g = ingest(manifest.sample_files[i], manifest, &meta);
        if (g.rank() != 2) g = g.reshaped({g.height(), g.width()});
        auto patches = make_patches(g, patch, patch);
        auto pairs = synthesize_pairs(patches, scale, meta.variable, manifest.name);
        for (auto& p : pairs) out.push_back(std::move(p));
    }
    return out;
}

} // namespace downscale
