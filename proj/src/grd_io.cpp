#include "downscale/grd_io.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace downscale {

namespace {

constexpr char kMagic[4] = {'G', 'R', 'D', '1'};
constexpr std::uint32_t kMaxRank = 8;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw ParseError("truncated GRD1 file while reading " + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace

void write_grd1(const std::string& path, const GridTensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os.write(kMagic, 4);
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u32(os, static_cast<std::uint32_t>(t.dim(i)));
    static_assert(sizeof(float) == 4);
    os.write(reinterpret_cast<const char*>(t.data()), t.numel() * 4);
    if (!os) throw IoError("write failed for " + path);
}

GridTensor read_grd1(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4)) throw ParseError(path + ": truncated GRD1 header");
    if (std::memcmp(magic, kMagic, 4) != 0) throw ParseError(path + ": bad GRD1 magic");
    const std::uint32_t rank = get_u32(is, "rank");
    if (rank == 0 || rank > kMaxRank)
        throw ParseError(path + ": implausible GRD1 rank " + std::to_string(rank));
    std::vector<int> shape(rank);
    std::int64_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        const std::uint32_t d = get_u32(is, "dimension " + std::to_string(i));
        if (d == 0 || d > (1u << 24)) throw ParseError(path + ": implausible GRD1 dimension");
        shape[i] = static_cast<int>(d);
        n *= d;
    }
    std::vector<float> data(static_cast<std::size_t>(n));
    if (!is.read(reinterpret_cast<char*>(data.data()), n * 4))
        throw ParseError(path + ": truncated GRD1 payload (expected " + std::to_string(n) + " floats)");
    return GridTensor(std::move(shape), std::move(data));
}

std::string sidecar_path(const std::string& grd_path) {
    const auto dot = grd_path.rfind('.');
    const std::string base = (dot == std::string::npos) ? grd_path : grd_path.substr(0, dot);
    return base + ".json";
}

void write_sidecar(const std::string& grd_path, const GridMeta& meta) {
    nlohmann::json j;
    j["variable"] = meta.variable;
    j["units"] = meta.units;
    j["lat_min"] = meta.lat_min;
    j["lat_max"] = meta.lat_max;
    j["lon_min"] = meta.lon_min;
    j["lon_max"] = meta.lon_max;
    j["source"] = meta.source;
    j["timestamp"] = meta.timestamp;
    std::ofstream os(sidecar_path(grd_path));
    if (!os) throw IoError("cannot open sidecar for " + grd_path);
    os << j.dump(2) << "\n";
}

GridMeta read_sidecar(const std::string& grd_path) {
    const std::string path = sidecar_path(grd_path);
    std::ifstream is(path);
    if (!is) throw ParseError("missing sidecar " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    GridMeta m;
    try {
        m.variable = j.at("variable").get<std::string>();
        m.units = j.value("units", "");
        m.lat_min = j.at("lat_min").get<double>();
        m.lat_max = j.at("lat_max").get<double>();
        m.lon_min = j.at("lon_min").get<double>();
        m.lon_max = j.at("lon_max").get<double>();
        m.source = j.value("source", "");
        m.timestamp = j.value("timestamp", "");
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    return m;
}

} // namespace downscale
