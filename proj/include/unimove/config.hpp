#pragma once

// Flat key = value config files ("# ..." comments, one pair per line).
// All run parameters flow through here so a run can be reproduced from the
// echoed config plus the seed.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "unimove/error.hpp"
#include "unimove/rng.hpp"

namespace unimove {

class Config {
public:
    Config() = default;

    static Config parse(std::istream& in) {
        Config cfg;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string s = strip(line);
            if (s.empty() || s[0] == '#') continue;
            auto eq = s.find('=');
            if (eq == std::string::npos)
                throw data_error("config line " + std::to_string(lineno) + ": expected key = value");
            std::string key = strip(s.substr(0, eq));
            std::string val = strip(s.substr(eq + 1));
            if (key.empty()) throw data_error("config line " + std::to_string(lineno) + ": empty key");
            cfg.kv_[key] = val;
        }
        return cfg;
    }

    static Config load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw data_error("cannot open config file: " + path);
        return parse(f);
    }

    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    void set(const std::string& key, const std::string& val) { kv_[key] = val; }

    std::string get_str(const std::string& key) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) throw data_error("missing config key: " + key);
        return it->second;
    }
    std::string get_str(const std::string& key, const std::string& dflt) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? dflt : it->second;
    }

    std::int64_t get_int(const std::string& key) const { return to_int(key, get_str(key)); }
    std::int64_t get_int(const std::string& key, std::int64_t dflt) const {
        return has(key) ? get_int(key) : dflt;
    }

    double get_double(const std::string& key) const { return to_double(key, get_str(key)); }
    double get_double(const std::string& key, double dflt) const {
        return has(key) ? get_double(key) : dflt;
    }

    std::vector<std::string> get_list(const std::string& key) const {
        std::vector<std::string> out;
        std::stringstream ss(get_str(key));
        std::string item;
        while (std::getline(ss, item, ',')) {
            std::string s = strip(item);
            if (!s.empty()) out.push_back(s);
        }
        return out;
    }

    std::vector<double> get_double_list(const std::string& key) const {
        std::vector<double> out;
        for (const auto& s : get_list(key)) out.push_back(to_double(key, s));
        return out;
    }

    const std::map<std::string, std::string>& entries() const { return kv_; }

    // Rejects keys outside the allowed set (typo guard for RunConfig).
    void restrict_keys(const std::vector<std::string>& allowed) const {
        for (const auto& [k, v] : kv_) {
            bool ok = false;
            for (const auto& a : allowed)
                if (k == a || (a.size() && a.back() == '*' && k.rfind(a.substr(0, a.size() - 1), 0) == 0))
                    ok = true;
            if (!ok) throw usage_error("unknown config key: " + k);
        }
    }

    // Canonical serialization; its hash stamps checkpoints and output dirs.
    std::string serialize() const {
        std::ostringstream os;
        for (const auto& [k, v] : kv_) os << k << " = " << v << "\n";
        return os.str();
    }

    std::uint64_t hash() const { return fnv1a(serialize()); }

    void save(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw data_error("cannot write config file: " + path);
        f << serialize();
    }

private:
    static std::string strip(const std::string& s) {
        std::size_t a = s.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) return "";
        std::size_t b = s.find_last_not_of(" \t\r\n");
        return s.substr(a, b - a + 1);
    }
    static std::int64_t to_int(const std::string& key, const std::string& s) {
        try {
            std::size_t pos = 0;
            std::int64_t v = std::stoll(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw data_error("config key '" + key + "': not an integer: " + s);
        }
    }
    static double to_double(const std::string& key, const std::string& s) {
        try {
            std::size_t pos = 0;
            double v = std::stod(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw data_error("config key '" + key + "': not a number: " + s);
        }
    }

    std::map<std::string, std::string> kv_;
};

}  // namespace unimove
