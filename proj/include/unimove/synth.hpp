#pragma once

// Seeded synthetic multi-city mobility generator. Latent "archetype"
// transition kernels live on an abstract g x g grid shared by every city and
// are projected onto each city's own grid, so cross-city pattern sharing is
// a controllable ground truth. Substitutes for proprietary mobility data.

#include <algorithm>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "unimove/config.hpp"
#include "unimove/data.hpp"
#include "unimove/error.hpp"
#include "unimove/geo.hpp"
#include "unimove/rng.hpp"

namespace unimove {

enum class ArchetypeKind { Rhythm, Cycle };

struct CitySpec {
    std::string id;
    std::size_t rows = 8, cols = 8;
    std::size_t users = 100;
    int days = 7;
    std::vector<double> mix;  // over archetypes, normalized at validation
    double lat0 = 30.0, lon0 = 110.0;
};

struct SynthSpec {
    std::uint64_t seed = 1;
    std::size_t archetypes = 3;
    std::size_t abstract_grid = 4;  // g; archetype kernels live on g x g cells
    ArchetypeKind kind = ArchetypeKind::Rhythm;
    std::vector<CitySpec> cities;

    void validate() const {
        if (cities.empty()) throw data_error("synth spec: no cities");
        if (archetypes == 0) throw data_error("synth spec: need at least one archetype");
        for (const auto& c : cities) {
            if (c.rows * c.cols < 8)
                throw data_error("city " + c.id + ": fewer than 8 locations");
            if (c.rows < abstract_grid || c.cols < abstract_grid)
                throw data_error("city " + c.id + ": grid smaller than abstract grid (" +
                                 std::to_string(abstract_grid) + ")");
            if (c.mix.size() != archetypes)
                throw data_error("city " + c.id + ": mixing weights must have one entry per archetype");
            double sum = 0.0;
            for (double w : c.mix) {
                if (w < 0) throw data_error("city " + c.id + ": negative mixing weight");
                sum += w;
            }
            if (sum <= 0) throw data_error("city " + c.id + ": mixing weights sum to zero");
            if (c.users == 0 || c.days < 3)
                throw data_error("city " + c.id + ": need users >= 1 and days >= 3");
        }
    }

    static SynthSpec from_config(const Config& cfg) {
        SynthSpec s;
        s.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 1));
        s.archetypes = cfg.get_int("archetypes", 3);
        s.abstract_grid = cfg.get_int("abstract_grid", 4);
        std::string kind = cfg.get_str("archetype_kind", "rhythm");
        if (kind == "rhythm") s.kind = ArchetypeKind::Rhythm;
        else if (kind == "cycle") s.kind = ArchetypeKind::Cycle;
        else throw data_error("unknown archetype_kind: " + kind);
        double lat0 = 30.0, lon0 = 110.0;
        for (const auto& id : cfg.get_list("cities")) {
            CitySpec c;
            c.id = id;
            std::string p = "city." + id + ".";
            c.rows = cfg.get_int(p + "rows", 8);
            c.cols = cfg.get_int(p + "cols", 8);
            c.users = cfg.get_int(p + "users", 100);
            c.days = static_cast<int>(cfg.get_int(p + "days", 7));
            c.mix = cfg.get_double_list(p + "mix");
            c.lat0 = cfg.get_double(p + "lat0", lat0);
            c.lon0 = cfg.get_double(p + "lon0", lon0);
            lat0 += 3.0;
            lon0 += 3.0;
            s.cities.push_back(std::move(c));
        }
        s.validate();
        return s;
    }
};

// City geometry whose metric extents give exactly rows x cols cells.
inline CityGeometry make_geometry(const CitySpec& c, double cell_m = 500.0) {
    CityGeometry g;
    g.city_id = c.id;
    g.cell_size_m = cell_m;
    g.lat_min = c.lat0;
    g.lat_max = c.lat0 + (c.rows * cell_m / kEarthRadiusM) / kDeg2Rad;
    double lat_c = 0.5 * (g.lat_min + g.lat_max) * kDeg2Rad;
    g.lon_min = c.lon0;
    g.lon_max = c.lon0 + (c.cols * cell_m / (kEarthRadiusM * std::cos(lat_c))) / kDeg2Rad;
    return g;
}

// Proportional projection of a city cell onto the abstract grid.
inline std::size_t abstract_cell_of(std::size_t rows, std::size_t cols, std::size_t g,
                                    std::size_t loc) {
    std::size_t r = loc / cols, c = loc % cols;
    std::size_t gr = r * g / rows, gc = c * g / cols;
    return gr * g + gc;
}

// Concrete city cells belonging to one abstract cell.
inline std::vector<std::size_t> block_cells(std::size_t rows, std::size_t cols, std::size_t g,
                                            std::size_t abstract_cell) {
    std::vector<std::size_t> out;
    for (std::size_t loc = 0; loc < rows * cols; ++loc)
        if (abstract_cell_of(rows, cols, g, loc) == abstract_cell) out.push_back(loc);
    return out;
}

namespace detail {

struct Archetype {
    std::size_t home = 0, work = 0;           // abstract cells
    std::vector<double> leisure;              // weights over abstract cells
    double wake_mean = 14, work_mean = 18, evening_mean = 38, return_mean = 43;
    double lunch_prob = 0.3, evening_prob = 0.5;
    std::vector<std::size_t> cycle;           // Cycle kind: deterministic loop
};

inline std::vector<Archetype> build_archetypes(const SynthSpec& spec) {
    std::vector<Archetype> out;
    std::size_t cells = spec.abstract_grid * spec.abstract_grid;
    Rng base = Rng(spec.seed).stream("archetypes");
    // Cycle kernels draw from disjoint cell pools where capacity allows, so
    // a location determines its successor corpus-wide, not just per user.
    std::vector<std::size_t> pool(cells);
    std::iota(pool.begin(), pool.end(), 0);
    base.stream("cycle_pool").shuffle(pool);
    for (std::size_t a = 0; a < spec.archetypes; ++a) {
        Rng rng = base.stream("a" + std::to_string(a));
        Archetype ar;
        ar.home = rng.below(cells);
        do {
            ar.work = rng.below(cells);
        } while (cells > 1 && ar.work == ar.home);
        ar.leisure.resize(cells);
        for (auto& w : ar.leisure) w = std::exp(rng.normal(0.0, 1.0));
        ar.wake_mean = 13.0 + 2.0 * rng.uniform();
        ar.work_mean = ar.wake_mean + 3.0 + 2.0 * rng.uniform();
        ar.evening_mean = 36.0 + 3.0 * rng.uniform();
        ar.return_mean = 42.0 + 2.0 * rng.uniform();
        ar.lunch_prob = 0.2 + 0.3 * rng.uniform();
        ar.evening_prob = 0.4 + 0.4 * rng.uniform();
        if (spec.kind == ArchetypeKind::Cycle) {
            std::size_t len = std::min<std::size_t>(3, cells);
            for (std::size_t i = 0; i < len; ++i)
                ar.cycle.push_back(pool[(a * len + i) % cells]);
        }
        out.push_back(std::move(ar));
    }
    return out;
}

inline int clamp_slot(double s) {
    return std::max(0, std::min(kTimeSlots - 1, static_cast<int>(std::lround(s))));
}

}  // namespace detail

struct CityOutput {
    CityGeometry geometry;
    std::vector<LocationRecord> locations;
    std::vector<Trajectory> trajectories;
};

inline CityOutput generate_city(const SynthSpec& spec, const CitySpec& cs,
                                const std::vector<detail::Archetype>& archetypes) {
    CityOutput out;
    out.geometry = make_geometry(cs);
    std::size_t n = cs.rows * cs.cols;
    std::size_t g = spec.abstract_grid;

    // Representative (center-most) concrete cell per abstract cell; cycle
    // kernels always use it so their location sequences are deterministic.
    std::vector<std::vector<std::size_t>> blocks(g * g);
    std::vector<std::size_t> representative(g * g, 0);
    for (std::size_t ac = 0; ac < g * g; ++ac) {
        blocks[ac] = block_cells(cs.rows, cs.cols, g, ac);
        if (!blocks[ac].empty()) representative[ac] = blocks[ac][blocks[ac].size() / 2];
    }

    std::vector<long long> visits(n, 0);
    Rng city_rng = Rng(spec.seed).stream("city:" + cs.id);

    for (std::size_t u = 0; u < cs.users; ++u) {
        Rng rng = city_rng.stream("user:" + std::to_string(u));
        std::size_t a = rng.categorical(cs.mix);
        const auto& ar = archetypes[a];
        Trajectory traj;
        traj.user_id = cs.id + "_u" + std::to_string(u);
        traj.city_id = cs.id;

        auto pick = [&](std::size_t ac) {
            const auto& b = blocks[ac];
            return b[rng.below(b.size())];
        };
        // Sticky concrete cells: a user keeps returning to the same places.
        std::size_t home = spec.kind == ArchetypeKind::Cycle ? representative[ar.home]
                                                             : pick(ar.home);
        std::size_t work = spec.kind == ArchetypeKind::Cycle ? representative[ar.work]
                                                             : pick(ar.work);
        std::map<std::size_t, std::size_t> leisure_spot;
        auto leisure_cell = [&]() {
            std::size_t ac = rng.categorical(ar.leisure);
            if (spec.kind == ArchetypeKind::Cycle) return representative[ac];
            auto it = leisure_spot.find(ac);
            if (it != leisure_spot.end()) return it->second;
            std::size_t cell = pick(ac);
            leisure_spot[ac] = cell;
            return cell;
        };

        for (int day = 0; day < cs.days; ++day) {
            if (spec.kind == ArchetypeKind::Cycle) {
                // Fixed loop over the archetype's cells at fixed slots.
                std::size_t len = ar.cycle.size();
                for (std::size_t step = 0; step < 4; ++step) {
                    std::size_t idx = (static_cast<std::size_t>(day) * 4 + step) % len;
                    traj.points.push_back({static_cast<std::int64_t>(representative[ar.cycle[idx]]),
                                           static_cast<int>(8 + step * 10), day});
                }
                continue;
            }
            int prev = -1;
            auto emit = [&](std::size_t cell, double slot_mean, double jitter) {
                int slot = detail::clamp_slot(rng.normal(slot_mean, jitter));
                slot = std::max(slot, prev + 1);
                if (slot >= kTimeSlots) return;
                prev = slot;
                traj.points.push_back({static_cast<std::int64_t>(cell), slot, day});
            };
            emit(home, ar.wake_mean, 1.0);
            emit(work, ar.work_mean, 1.0);
            if (rng.uniform() < ar.lunch_prob) emit(leisure_cell(), 26.0, 1.5);
            if (rng.uniform() < ar.evening_prob) emit(leisure_cell(), ar.evening_mean, 1.5);
            emit(home, ar.return_mean, 1.0);
        }
        for (const auto& p : traj.points) ++visits[static_cast<std::size_t>(p.location_id)];
        out.trajectories.push_back(std::move(traj));
    }

    // POI counts consistent with generated traffic so geo features are
    // non-degenerate; category profile depends on the cell's abstract role.
    Rng poi_rng = city_rng.stream("poi");
    std::set<std::size_t> homes, works;
    for (const auto& ar : archetypes) {
        homes.insert(ar.home);
        works.insert(ar.work);
    }
    for (std::size_t loc = 0; loc < n; ++loc) {
        LocationRecord rec;
        rec.location_id = static_cast<std::int64_t>(loc);
        auto [lat, lon] = cell_centroid(out.geometry, loc);
        rec.lat = lat;
        rec.lon = lon;
        std::size_t ac = abstract_cell_of(cs.rows, cs.cols, g, loc);
        double traffic = std::log1p(static_cast<double>(visits[loc]));
        rec.poi_counts.assign(kPoiCategories, 0);
        for (std::size_t cat = 0; cat < kPoiCategories; ++cat) {
            double w = 0.5;
            if (homes.count(ac) && (cat == 11 || cat == 6)) w = 2.0;       // residential mix
            if (works.count(ac) && (cat == 12 || cat == 13)) w = 2.0;      // office mix
            if (!homes.count(ac) && !works.count(ac) && (cat == 4 || cat == 5 || cat == 7))
                w = 1.5;                                                   // leisure mix
            double lambda = w * (0.5 + traffic);
            long long cnt = static_cast<long long>(std::floor(lambda + poi_rng.uniform() * 2.0));
            rec.poi_counts[cat] = std::max(0LL, cnt);
        }
        rec.visits = visits[loc];
        out.locations.push_back(std::move(rec));
    }
    return out;
}

// Writes corpus files (locations.csv + trajectories.txt per city). Byte
// deterministic in the spec seed.
inline void generate(const SynthSpec& spec, const std::string& out_dir) {
    spec.validate();
    namespace fs = std::filesystem;
    auto archetypes = detail::build_archetypes(spec);
    fs::create_directories(out_dir);
    for (const auto& cs : spec.cities) {
        CityOutput city = generate_city(spec, cs, archetypes);
        fs::path dir = fs::path(out_dir) / cs.id;
        fs::create_directories(dir);
        save_locations_csv((dir / "locations.csv").string(), city.locations);
        save_trajectories((dir / "trajectories.txt").string(), city.trajectories);
    }
}

// --------------------------------------------------------------------------
// Exhaustive first-order oracle over a generated corpus.

struct MarkovOracleResult {
    double acc1 = 0.0;          // argmax transition prediction, frequency fallback
    double unseen_fraction = 0.0;
    std::size_t transitions = 0;
};

inline MarkovOracleResult markov_oracle(const MultiCityCorpus& corpus, const std::string& city) {
    const CityData& cd = corpus.city(city);
    std::size_t n = cd.features.n_locations;
    std::vector<std::map<std::int64_t, long long>> counts(n);
    std::vector<long long> freq(n, 0);
    for (const auto& t : cd.train) {
        for (std::size_t i = 0; i < t.points.size(); ++i) {
            ++freq[static_cast<std::size_t>(t.points[i].location_id)];
            if (i + 1 < t.points.size())
                ++counts[static_cast<std::size_t>(t.points[i].location_id)]
                        [t.points[i + 1].location_id];
        }
    }
    auto argmax_map = [](const std::map<std::int64_t, long long>& m) {
        std::int64_t best = -1;
        long long best_c = -1;
        for (const auto& [loc, c] : m)
            if (c > best_c) {
                best = loc;
                best_c = c;
            }
        return best;  // std::map iterates ascending, so ties pick the lowest id
    };
    std::int64_t global_best = 0;
    long long global_c = -1;
    for (std::size_t i = 0; i < n; ++i)
        if (freq[i] > global_c) {
            global_best = static_cast<std::int64_t>(i);
            global_c = freq[i];
        }

    MarkovOracleResult res;
    std::size_t hits = 0, unseen = 0;
    for (const auto& t : cd.test)
        for (std::size_t i = 0; i + 1 < t.points.size(); ++i) {
            auto ctx = static_cast<std::size_t>(t.points[i].location_id);
            std::int64_t pred;
            if (counts[ctx].empty()) {
                pred = global_best;
                ++unseen;
            } else {
                pred = argmax_map(counts[ctx]);
            }
            if (pred == t.points[i + 1].location_id) ++hits;
            ++res.transitions;
        }
    if (res.transitions) {
        res.acc1 = static_cast<double>(hits) / res.transitions;
        res.unseen_fraction = static_cast<double>(unseen) / res.transitions;
    }
    return res;
}

}  // namespace unimove
