#pragma once

// Acc@k over score rows. Ties break by ascending location id so reports are
// deterministic; the same code path serves the model and the baselines.

#include <algorithm>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "unimove/error.hpp"

namespace unimove {

// True iff `target` is among the k best-scored indices (ties by ascending id).
inline bool in_top_k(const std::vector<double>& scores, std::int64_t target, std::size_t k) {
    double ts = scores[static_cast<std::size_t>(target)];
    std::size_t better = 0;
    for (std::size_t j = 0; j < scores.size(); ++j) {
        if (scores[j] > ts) ++better;
        else if (scores[j] == ts && static_cast<std::int64_t>(j) < target) ++better;
    }
    return better < k;
}

inline double acc_at_k(const std::vector<std::vector<double>>& score_rows,
                       const std::vector<std::int64_t>& targets, std::size_t k) {
    if (score_rows.empty()) throw data_error("acc_at_k: empty input");
    if (score_rows.size() != targets.size()) throw data_error("acc_at_k: rows/targets mismatch");
    if (k < 1) throw data_error("acc_at_k: k must be >= 1");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < score_rows.size(); ++i)
        if (in_top_k(score_rows[i], targets[i], k)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(score_rows.size());
}

struct CityMetrics {
    double loss = 0.0;
    double acc1 = 0.0, acc3 = 0.0, acc5 = 0.0;
    std::size_t samples = 0;
};

struct EvalReport {
    std::map<std::string, CityMetrics> per_city;

    CityMetrics overall() const {
        CityMetrics o;
        double loss_weighted = 0.0;
        for (const auto& [id, m] : per_city) {
            o.acc1 += m.acc1 * m.samples;
            o.acc3 += m.acc3 * m.samples;
            o.acc5 += m.acc5 * m.samples;
            loss_weighted += m.loss * m.samples;
            o.samples += m.samples;
        }
        if (o.samples) {
            o.acc1 /= o.samples;
            o.acc3 /= o.samples;
            o.acc5 /= o.samples;
            o.loss = loss_weighted / o.samples;
        }
        return o;
    }

    std::string table(const std::string& title) const {
        std::ostringstream os;
        os << title << "\n";
        os << "city          samples    loss     acc@1    acc@3    acc@5\n";
        char buf[160];
        for (const auto& [id, m] : per_city) {
            std::snprintf(buf, sizeof(buf), "%-12s %8zu  %7.4f  %7.4f  %7.4f  %7.4f\n",
                          id.c_str(), m.samples, m.loss, m.acc1, m.acc3, m.acc5);
            os << buf;
        }
        CityMetrics o = overall();
        std::snprintf(buf, sizeof(buf), "%-12s %8zu  %7.4f  %7.4f  %7.4f  %7.4f\n", "overall",
                      o.samples, o.loss, o.acc1, o.acc3, o.acc5);
        os << buf;
        return os.str();
    }
};

}  // namespace unimove
