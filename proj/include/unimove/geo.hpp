#pragma once

// Spatial discretization and per-location features: grid cells over a city
// bounding box, POI distribution vectors, popularity ranks, and per-city
// coordinate normalization.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "unimove/error.hpp"

namespace unimove {

constexpr std::size_t kPoiCategories = 14;
constexpr std::size_t kPoiVectorLen = 2 * kPoiCategories;
constexpr int kPopularityRanks = 8;
constexpr double kEarthRadiusM = 6371000.0;
constexpr double kDeg2Rad = M_PI / 180.0;

struct CityGeometry {
    std::string city_id;
    double lat_min = 0, lat_max = 0, lon_min = 0, lon_max = 0;
    double cell_size_m = 500.0;

    void validate() const {
        if (!(lat_min < lat_max) || !(lon_min < lon_max))
            throw data_error("city " + city_id + ": degenerate bounding box");
        if (!(cell_size_m > 0)) throw data_error("city " + city_id + ": cell size must be positive");
    }

    // Metric extents via a local equirectangular approximation at the bbox
    // center latitude; deterministic and adequate at city scale.
    double width_m() const {
        double lat_c = 0.5 * (lat_min + lat_max) * kDeg2Rad;
        return (lon_max - lon_min) * kDeg2Rad * std::cos(lat_c) * kEarthRadiusM;
    }
    double height_m() const { return (lat_max - lat_min) * kDeg2Rad * kEarthRadiusM; }

    std::size_t cols() const {
        return static_cast<std::size_t>(std::max(1.0, std::ceil(width_m() / cell_size_m - 1e-9)));
    }
    std::size_t rows() const {
        return static_cast<std::size_t>(std::max(1.0, std::ceil(height_m() / cell_size_m - 1e-9)));
    }
};

// Row-major cell index of a point; origin cell is the south-west corner.
inline std::size_t grid_index(const CityGeometry& g, double lat, double lon) {
    g.validate();
    if (lat < g.lat_min || lat > g.lat_max || lon < g.lon_min || lon > g.lon_max)
        throw data_error("point (" + std::to_string(lat) + "," + std::to_string(lon) +
                         ") outside bbox of city " + g.city_id);
    double lat_c = 0.5 * (g.lat_min + g.lat_max) * kDeg2Rad;
    double x = (lon - g.lon_min) * kDeg2Rad * std::cos(lat_c) * kEarthRadiusM;
    double y = (lat - g.lat_min) * kDeg2Rad * kEarthRadiusM;
    std::size_t col = std::min(g.cols() - 1, static_cast<std::size_t>(x / g.cell_size_m));
    std::size_t row = std::min(g.rows() - 1, static_cast<std::size_t>(y / g.cell_size_m));
    return row * g.cols() + col;
}

// Centroid (lat, lon) of a row-major cell index.
inline std::pair<double, double> cell_centroid(const CityGeometry& g, std::size_t id) {
    std::size_t row = id / g.cols(), col = id % g.cols();
    double lat_c = 0.5 * (g.lat_min + g.lat_max) * kDeg2Rad;
    double x = (col + 0.5) * g.cell_size_m;
    double y = (row + 0.5) * g.cell_size_m;
    double lon = g.lon_min + x / (kEarthRadiusM * std::cos(lat_c)) / kDeg2Rad;
    double lat = g.lat_min + y / kEarthRadiusM / kDeg2Rad;
    return {lat, lon};
}

// [n_1..n_14, p_1..p_14]; fractions are all zero when every count is zero.
inline std::vector<double> poi_vector(const std::vector<long long>& counts) {
    if (counts.size() != kPoiCategories)
        throw data_error("poi_vector expects " + std::to_string(kPoiCategories) + " counts, got " +
                         std::to_string(counts.size()));
    std::vector<double> out(kPoiVectorLen, 0.0);
    long long total = 0;
    for (std::size_t i = 0; i < kPoiCategories; ++i) {
        if (counts[i] < 0) throw data_error("negative POI count at category " + std::to_string(i));
        out[i] = static_cast<double>(counts[i]);
        total += counts[i];
    }
    if (total > 0)
        for (std::size_t i = 0; i < kPoiCategories; ++i)
            out[kPoiCategories + i] = out[i] / static_cast<double>(total);
    return out;
}

// Percentile buckets over descending visit counts; boundaries are
// left-exclusive / right-inclusive, so R = 0 means most popular.
// The running text assigns the top 1% a value of 1 while the rank table
// starts at 0; the table is taken as authoritative.
inline int popularity_bucket(double percentile) {
    static constexpr std::array<double, 7> bounds = {0.01, 0.05, 0.10, 0.20, 0.40, 0.60, 0.80};
    for (std::size_t i = 0; i < bounds.size(); ++i)
        if (percentile <= bounds[i] + 1e-12) return static_cast<int>(i);
    return 7;
}

// R per location, aligned with visit_counts order. Ties break by ascending
// location id (= input position) for reproducibility; the percentile
// direction (descending counts) is an assumption the sources leave open.
inline std::vector<int> popularity_rank(const std::vector<long long>& visit_counts) {
    if (visit_counts.empty()) throw data_error("popularity_rank: empty input");
    std::size_t n = visit_counts.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (visit_counts[a] != visit_counts[b]) return visit_counts[a] > visit_counts[b];
        return a < b;
    });
    std::vector<int> r(n);
    for (std::size_t pos = 0; pos < n; ++pos) {
        double percentile = static_cast<double>(pos + 1) / static_cast<double>(n);
        r[order[pos]] = popularity_bucket(percentile);
    }
    return r;
}

struct LocationRecord {
    std::int64_t location_id = 0;
    double lat = 0, lon = 0;
    std::vector<long long> poi_counts;  // 14 entries
    long long visits = 0;
    int rank = 0;  // filled by build_features
};

// Per-city feature table in model-ready form.
struct CityFeatures {
    std::string city_id;
    std::size_t n_locations = 0;
    std::vector<double> poi;   // N x 28, counts log1p-transformed
    std::vector<double> geo;   // N x 2, normalized (lat, lon)
    std::vector<int> rank;     // N
    std::vector<double> raw_lat, raw_lon;
};

// Normalize to mean 0 / std 1 per axis; a degenerate axis maps to 0.
inline void normalize_axis(std::vector<double>& v) {
    if (v.empty()) return;
    double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    double var = 0.0;
    for (double x : v) var += (x - m) * (x - m);
    var /= v.size();
    double sd = std::sqrt(var);
    for (double& x : v) x = sd > 1e-12 ? (x - m) / sd : 0.0;
}

inline CityFeatures build_features(const std::string& city_id,
                                   const std::vector<LocationRecord>& records) {
    if (records.empty()) throw data_error("city " + city_id + ": empty location table");
    CityFeatures f;
    f.city_id = city_id;
    f.n_locations = records.size();
    std::vector<long long> visits;
    for (const auto& rec : records) {
        auto p = poi_vector(rec.poi_counts);
        for (std::size_t i = 0; i < kPoiCategories; ++i) p[i] = std::log1p(p[i]);
        f.poi.insert(f.poi.end(), p.begin(), p.end());
        f.raw_lat.push_back(rec.lat);
        f.raw_lon.push_back(rec.lon);
        visits.push_back(rec.visits);
    }
    std::vector<double> lat = f.raw_lat, lon = f.raw_lon;
    normalize_axis(lat);
    normalize_axis(lon);
    for (std::size_t i = 0; i < records.size(); ++i) {
        f.geo.push_back(lat[i]);
        f.geo.push_back(lon[i]);
    }
    f.rank = popularity_rank(visits);
    return f;
}

// --------------------------------------------------------------------------
// Locations file: CSV `location_id,lat,lon,poi_0..poi_13,visits` with header.

inline void save_locations_csv(const std::string& path,
                               const std::vector<LocationRecord>& records) {
    std::ofstream f(path);
    if (!f) throw data_error("cannot write locations file: " + path);
    f << "location_id,lat,lon";
    for (std::size_t i = 0; i < kPoiCategories; ++i) f << ",poi_" << i;
    f << ",visits\n";
    char buf[64];
    for (const auto& r : records) {
        f << r.location_id;
        std::snprintf(buf, sizeof(buf), ",%.9f,%.9f", r.lat, r.lon);
        f << buf;
        for (auto c : r.poi_counts) f << "," << c;
        f << "," << r.visits << "\n";
    }
}

inline std::vector<LocationRecord> load_locations_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw data_error("cannot open locations file: " + path);
    std::string line;
    if (!std::getline(f, line)) throw data_error("empty locations file: " + path);
    if (line.rfind("location_id,", 0) != 0)
        throw data_error("locations file missing header: " + path);
    std::vector<LocationRecord> out;
    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 3 + kPoiCategories + 1)
            throw data_error(path + ":" + std::to_string(lineno) + ": expected " +
                             std::to_string(4 + kPoiCategories) + " columns");
        LocationRecord r;
        r.location_id = std::stoll(cells[0]);
        r.lat = std::stod(cells[1]);
        r.lon = std::stod(cells[2]);
        for (std::size_t i = 0; i < kPoiCategories; ++i)
            r.poi_counts.push_back(std::stoll(cells[3 + i]));
        r.visits = std::stoll(cells[3 + kPoiCategories]);
        out.push_back(std::move(r));
    }
    if (out.empty()) throw data_error("locations file has no rows: " + path);
    return out;
}

}  // namespace unimove
