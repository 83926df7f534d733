#pragma once

#include <string>

#include "downscale/grid.hpp"

namespace downscale {

/// Sidecar metadata stored next to each .grd file (same basename, .json).
struct GridMeta {
    std::string variable;
    std::string units;
    double lat_min = 0.0, lat_max = 0.0;
    double lon_min = 0.0, lon_max = 0.0;
    std::string source;
    std::string timestamp;
};

/// GRD1 raster format: magic "GRD1", u32 LE rank, rank u32 LE dimension
/// sizes, then the row-major float32 LE payload.
void write_grd1(const std::string& path, const GridTensor& t);
GridTensor read_grd1(const std::string& path);

std::string sidecar_path(const std::string& grd_path);
void write_sidecar(const std::string& grd_path, const GridMeta& meta);
GridMeta read_sidecar(const std::string& grd_path);

} // namespace downscale
