#pragma once

#include <map>
#include <string>
#include <vector>

#include "downscale/grd_io.hpp"
#include "downscale/grid.hpp"

namespace downscale {

/// Geographic bounding box, degrees. Latitude rows are stored north to south;
/// longitudes run -180..180 east.
struct Region {
    double lat_min = 0.0, lat_max = 0.0;
    double lon_min = 0.0, lon_max = 0.0;

    void validate() const {
        if (!(lat_min < lat_max)) throw BoundsError("lat_min must be < lat_max");
        if (!(lon_min < lon_max)) throw BoundsError("lon_min must be < lon_max");
    }

    bool contains(const Region& o) const {
        return o.lat_min >= lat_min && o.lat_max <= lat_max && o.lon_min >= lon_min && o.lon_max <= lon_max;
    }

    /// Open-interval intersection test (shared edges do not overlap).
    bool overlaps(const Region& o) const {
        return lat_min < o.lat_max && o.lat_min < lat_max && lon_min < o.lon_max && o.lon_min < lon_max;
    }
};

/// Metadata + ordered sample index for one data product. split_tags[i] labels
/// sample_files[i] (e.g. "train" / "test", or scenario names).
struct DatasetManifest {
    std::string name; // product id, e.g. ERA5 | MERRA2 | CFSR | NorESM | synthetic-<kind>
    std::vector<std::string> variables;
    double lat_resolution = 0.0, lon_resolution = 0.0; // degrees per cell
    Region region;
    std::vector<std::string> sample_files; // GRD1 paths, relative to the manifest
    std::vector<std::string> split_tags;
    std::int64_t declared_count = 0; // informational

    void validate() const;
};

void save_manifest(const DatasetManifest& m, const std::string& path);
/// Loads and validates; sample_files are rewritten to paths resolved against
/// the manifest's directory. Order is preserved exactly.
DatasetManifest load_manifest(const std::string& path);

/// Matched low/high resolution fields of one variable (physical units).
struct SamplePair {
    GridTensor lr, hr; // rank-2 single fields
    std::string variable;
    std::string source;
    int scale = 1;
};

/// Reads a GRD1 sample plus sidecar and validates the metadata against the
/// manifest (variable listed, bounds inside the manifest region, finite data).
GridTensor ingest(const std::string& path, const DatasetManifest& manifest, GridMeta* meta_out = nullptr);

/// Cuts the index window covering `want` from a grid spanning `grid_bounds`
/// at `cell_size` degrees per cell: floor/ceil of (want - origin)/cell_size.
GridTensor extract_region(const GridTensor& grid, const Region& grid_bounds, double cell_size,
                          const Region& want);

/// Non-overlapping row-major tiling; trailing partial tiles are discarded.
std::vector<GridTensor> make_patches(const GridTensor& grid, int patch, int stride);

/// lr = avg_pool(hr, scale) for each patch; metadata is carried through.
std::vector<SamplePair> synthesize_pairs(const std::vector<GridTensor>& hr_patches, int scale,
                                         const std::string& variable, const std::string& source);

/// Per-variable mean/std over all cells of the given split (float64
/// accumulation, population std). Zero variance is rejected.
std::map<std::string, NormStats> compute_norm_stats(const DatasetManifest& manifest,
                                                    const std::string& split = "train");

void save_stats(const std::map<std::string, NormStats>& stats, const std::string& path);
std::map<std::string, NormStats> load_stats(const std::string& path);

/// Options for the synthetic generator. Kinds differ in covariance structure:
/// isotropic Gaussian bumps, anisotropic (rotated, elongated) bumps, and
/// band-limited power-law spectra, so cross-kind transfer has a genuine gap.
struct SynthOptions {
    std::string kind = "gaussian-bumps"; // gaussian-bumps | anisotropic-bumps | banded-spectrum
    int n = 100;
    int size = 64; // power of two
    std::uint64_t seed = 0;
    std::string variable = "field";
    Region region{45.0, 55.0, 5.0, 15.0};
    double train_fraction = 0.8; // leading fraction tagged "train", remainder "test"
    double spectral_slope = 2.5; // banded-spectrum: power ~ |k|^-slope
};

/// Writes n GRD1 fields + sidecars + manifest.json under out_dir;
/// deterministic bytes for a given seed. Returns the manifest (with resolved
/// paths) and writes it to out_dir/manifest.json.
DatasetManifest synth_dataset(const SynthOptions& opt, const std::string& out_dir);

/// Loads every sample of a split, patches the grids to patch x patch tiles
/// and synthesizes LR/HR pairs at the given scale.
std::vector<SamplePair> load_pairs(const DatasetManifest& manifest, const std::string& split,
                                   int patch, int scale);

} // namespace downscale
