#pragma once

// Trajectory data model: temporal discretization, sliding-window
// preprocessing, padding, per-user splits, and multi-city batch scheduling.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "unimove/error.hpp"
#include "unimove/geo.hpp"
#include "unimove/rng.hpp"
#include "unimove/tensor.hpp"

namespace unimove {

constexpr int kTimeSlots = 48;
constexpr std::int64_t kIgnoreTarget = -1;

// Special-token channel values; the serialized token channel keeps the
// termination token as 1 and padding as 0.
enum class TokenKind : std::int64_t { Pad = 0, Eos = 1, Real = 2 };

struct TrajPoint {
    std::int64_t location_id = 0;
    int time_slot = 0;  // [0, 48)
    int day_index = 0;
};

struct Trajectory {
    std::string user_id;
    std::string city_id;
    std::vector<TrajPoint> points;
};

// Nearest half-hour boundary; 24:00 wraps to slot 0, half-way rounds up.
inline int time_slot(double seconds_of_day) {
    if (seconds_of_day < 0 || seconds_of_day >= 86400.0)
        throw data_error("timestamp out of range [0, 86400): " + std::to_string(seconds_of_day));
    return static_cast<int>(std::floor(seconds_of_day / 1800.0 + 0.5)) % kTimeSlots;
}

inline bool chronological(const std::vector<TrajPoint>& pts) {
    for (std::size_t i = 1; i < pts.size(); ++i) {
        if (pts[i].day_index < pts[i - 1].day_index) return false;
        if (pts[i].day_index == pts[i - 1].day_index && pts[i].time_slot < pts[i - 1].time_slot)
            return false;
    }
    return true;
}

// Sliding windows advancing one day; windows with fewer than min_points
// points are dropped.
inline std::vector<Trajectory> window_split(const Trajectory& traj, int window_days = 3,
                                            std::size_t min_points = 5) {
    if (!chronological(traj.points))
        throw data_error("trajectory of user " + traj.user_id + " is not chronological");
    std::vector<Trajectory> out;
    if (traj.points.empty()) return out;
    int day_min = traj.points.front().day_index;
    int day_max = traj.points.back().day_index;
    int last_start = std::max(day_min, day_max - window_days + 1);
    for (int start = day_min; start <= last_start; ++start) {
        Trajectory w;
        w.user_id = traj.user_id;
        w.city_id = traj.city_id;
        for (const auto& p : traj.points)
            if (p.day_index >= start && p.day_index < start + window_days) w.points.push_back(p);
        if (w.points.size() >= min_points) out.push_back(std::move(w));
    }
    return out;
}

struct PaddedBatch {
    std::string city_id;
    std::size_t batch = 0, capacity = 0;  // B, T
    IntArray location_ids;   // B x T (0 at non-REAL positions)
    IntArray time_slots;     // B x T
    IntArray token_kind;     // B x T, values from TokenKind
    IntArray target_ids;     // B x T, kIgnoreTarget outside supervised range
    BoolArray real_mask;     // B x T, true exactly on REAL positions
    std::vector<std::size_t> lengths;
};

// Pads same-city trajectories to capacity T: REAL prefix, one EOS, then PAD.
// target_ids[t] = location at t+1 for t in [0, len-1); ignore elsewhere.
inline PaddedBatch pad_batch(const std::vector<Trajectory>& trajs, std::size_t capacity) {
    if (trajs.empty()) throw data_error("pad_batch: empty batch");
    PaddedBatch b;
    b.city_id = trajs[0].city_id;
    b.batch = trajs.size();
    b.capacity = capacity;
    Shape s{b.batch, capacity};
    b.location_ids = IntArray(s, 0);
    b.time_slots = IntArray(s, 0);
    b.token_kind = IntArray(s, static_cast<std::int64_t>(TokenKind::Pad));
    b.target_ids = IntArray(s, kIgnoreTarget);
    b.real_mask = BoolArray(s, false);
    for (std::size_t i = 0; i < trajs.size(); ++i) {
        const auto& t = trajs[i];
        if (t.city_id != b.city_id) throw data_error("pad_batch: mixed cities in one batch");
        std::size_t len = t.points.size();
        if (len + 1 > capacity)
            throw data_error("trajectory of length " + std::to_string(len) +
                             " exceeds capacity " + std::to_string(capacity) +
                             " (truncate upstream)");
        for (std::size_t p = 0; p < len; ++p) {
            std::size_t at = i * capacity + p;
            b.location_ids.v[at] = t.points[p].location_id;
            b.time_slots.v[at] = t.points[p].time_slot;
            b.token_kind.v[at] = static_cast<std::int64_t>(TokenKind::Real);
            b.real_mask.v[at] = 1;
            if (p + 1 < len) b.target_ids.v[at] = t.points[p + 1].location_id;
        }
        b.token_kind.v[i * capacity + len] = static_cast<std::int64_t>(TokenKind::Eos);
        b.lengths.push_back(len);
    }
    return b;
}

// Recovers the (location_id, time_slot) sequences from a padded batch.
inline std::vector<std::vector<std::pair<std::int64_t, int>>> unpad(const PaddedBatch& b) {
    std::vector<std::vector<std::pair<std::int64_t, int>>> out(b.batch);
    for (std::size_t i = 0; i < b.batch; ++i)
        for (std::size_t p = 0; p < b.capacity; ++p)
            if (b.real_mask.v[i * b.capacity + p])
                out[i].push_back({b.location_ids.v[i * b.capacity + p],
                                  static_cast<int>(b.time_slots.v[i * b.capacity + p])});
    return out;
}

struct CityData {
    std::string city_id;
    std::vector<LocationRecord> locations;
    CityFeatures features;
    std::vector<Trajectory> train, val, test;
};

struct MultiCityCorpus {
    std::map<std::string, CityData> cities;

    const CityData& city(const std::string& id) const {
        auto it = cities.find(id);
        if (it == cities.end()) throw data_error("unknown city: " + id);
        return it->second;
    }
    std::vector<std::string> city_ids() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : cities) out.push_back(k);
        return out;
    }
};

// 6:2:2 user-disjoint split, deterministic in the seed.
inline void split_users(const std::vector<Trajectory>& windows, std::uint64_t seed,
                        std::vector<Trajectory>& train, std::vector<Trajectory>& val,
                        std::vector<Trajectory>& test) {
    std::set<std::string> users;
    for (const auto& w : windows) users.insert(w.user_id);
    std::vector<std::string> order(users.begin(), users.end());
    Rng rng(seed);
    rng.stream("split").shuffle(order);
    std::size_t n = order.size();
    std::size_t n_train = (n * 6) / 10;
    std::size_t n_val = (n * 2) / 10;
    std::map<std::string, int> bucket;
    for (std::size_t i = 0; i < n; ++i)
        bucket[order[i]] = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
    for (const auto& w : windows) {
        int b = bucket[w.user_id];
        (b == 0 ? train : b == 1 ? val : test).push_back(w);
    }
}

// One epoch: every city's train batches, shuffled together, each batch
// homogeneous in city. City frequency follows data volume by construction.
struct BatchRef {
    std::string city_id;
    std::vector<std::size_t> indices;  // into that city's train list
};

inline std::vector<BatchRef> sample_schedule(const MultiCityCorpus& corpus,
                                             std::size_t batch_size, Rng& rng) {
    if (corpus.cities.empty()) throw data_error("sample_schedule: empty corpus");
    std::vector<BatchRef> epoch;
    for (const auto& [city_id, cd] : corpus.cities) {
        std::vector<std::size_t> order(cd.train.size());
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        for (std::size_t off = 0; off < order.size(); off += batch_size) {
            BatchRef ref;
            ref.city_id = city_id;
            for (std::size_t j = off; j < std::min(off + batch_size, order.size()); ++j)
                ref.indices.push_back(order[j]);
            epoch.push_back(std::move(ref));
        }
    }
    rng.shuffle(epoch);
    return epoch;
}

// --------------------------------------------------------------------------
// Trajectories file: one per line, `user_id<TAB>day:slot:loc,day:slot:loc,...`

inline void save_trajectories(const std::string& path, const std::vector<Trajectory>& trajs) {
    std::ofstream f(path);
    if (!f) throw data_error("cannot write trajectories file: " + path);
    for (const auto& t : trajs) {
        f << t.user_id << "\t";
        for (std::size_t i = 0; i < t.points.size(); ++i) {
            const auto& p = t.points[i];
            if (i) f << ",";
            f << p.day_index << ":" << p.time_slot << ":" << p.location_id;
        }
        f << "\n";
    }
}

inline std::vector<Trajectory> load_trajectories(const std::string& path,
                                                 const std::string& city_id) {
    std::ifstream f(path);
    if (!f) throw data_error("cannot open trajectories file: " + path);
    std::vector<Trajectory> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw data_error(path + ":" + std::to_string(lineno) + ": missing tab separator");
        Trajectory t;
        t.user_id = line.substr(0, tab);
        t.city_id = city_id;
        std::stringstream ss(line.substr(tab + 1));
        std::string item;
        while (std::getline(ss, item, ',')) {
            TrajPoint p;
            long long loc = 0;
            if (std::sscanf(item.c_str(), "%d:%d:%lld", &p.day_index, &p.time_slot, &loc) != 3)
                throw data_error(path + ":" + std::to_string(lineno) + ": bad point '" + item + "'");
            p.location_id = loc;
            if (p.time_slot < 0 || p.time_slot >= kTimeSlots)
                throw data_error(path + ":" + std::to_string(lineno) + ": time slot out of range");
            t.points.push_back(p);
        }
        if (!chronological(t.points))
            throw data_error(path + ":" + std::to_string(lineno) + ": points not chronological");
        out.push_back(std::move(t));
    }
    return out;
}

struct PrepConfig {
    int window_days = 3;
    std::size_t min_points = 5;
    std::size_t max_seq_len = 64;
    std::uint64_t split_seed = 1;
};

inline void validate_vocabulary(const std::vector<Trajectory>& trajs, std::size_t n_locations,
                                const std::string& city_id) {
    for (const auto& t : trajs)
        for (const auto& p : t.points)
            if (p.location_id < 0 || static_cast<std::size_t>(p.location_id) >= n_locations)
                throw data_error("city " + city_id + ": location id " +
                                 std::to_string(p.location_id) + " outside vocabulary of size " +
                                 std::to_string(n_locations));
}

// Loads a corpus directory: one subdirectory per city holding locations.csv
// plus either pre-split train/val/test.txt or a raw trajectories.txt to be
// windowed and split here.
inline MultiCityCorpus load_corpus(const std::string& dir, const PrepConfig& prep) {
    namespace fs = std::filesystem;
    MultiCityCorpus corpus;
    if (!fs::is_directory(dir)) throw data_error("corpus directory not found: " + dir);
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_directory()) continue;
        std::string city_id = entry.path().filename().string();
        fs::path cp = entry.path();
        if (!fs::exists(cp / "locations.csv")) continue;
        CityData cd;
        cd.city_id = city_id;
        cd.locations = load_locations_csv((cp / "locations.csv").string());
        cd.features = build_features(city_id, cd.locations);
        if (fs::exists(cp / "train.txt")) {
            cd.train = load_trajectories((cp / "train.txt").string(), city_id);
            cd.val = load_trajectories((cp / "val.txt").string(), city_id);
            cd.test = load_trajectories((cp / "test.txt").string(), city_id);
        } else if (fs::exists(cp / "trajectories.txt")) {
            auto raw = load_trajectories((cp / "trajectories.txt").string(), city_id);
            std::vector<Trajectory> windows;
            for (const auto& t : raw) {
                auto ws = window_split(t, prep.window_days, prep.min_points);
                for (auto& w : ws)
                    if (w.points.size() + 1 <= prep.max_seq_len) windows.push_back(std::move(w));
            }
            split_users(windows, prep.split_seed, cd.train, cd.val, cd.test);
        } else {
            throw data_error("city " + city_id + ": no trajectories found");
        }
        validate_vocabulary(cd.train, cd.locations.size(), city_id);
        validate_vocabulary(cd.val, cd.locations.size(), city_id);
        validate_vocabulary(cd.test, cd.locations.size(), city_id);
        corpus.cities[city_id] = std::move(cd);
    }
    if (corpus.cities.empty()) throw data_error("no cities found under " + dir);
    return corpus;
}

// Hash over location tables and split sizes; stamps checkpoints so a model
// is never evaluated against a different corpus by accident.
inline std::uint64_t corpus_manifest_hash(const MultiCityCorpus& corpus) {
    std::ostringstream os;
    for (const auto& [id, cd] : corpus.cities)
        os << id << ":" << cd.locations.size() << ":" << cd.train.size() << ":" << cd.val.size()
           << ":" << cd.test.size() << ";";
    return fnv1a(os.str());
}

}  // namespace unimove
