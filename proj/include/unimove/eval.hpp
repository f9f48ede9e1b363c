#pragma once

// Evaluation harness: baselines (first-order Markov, linear-over-features),
// the joint-vs-separate training comparison, and embedding / expert-usage
// exports. Baseline scores flow through the same acc_at_k path as the model.

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "unimove/metrics.hpp"
#include "unimove/model.hpp"
#include "unimove/synth.hpp"
#include "unimove/train.hpp"

namespace unimove {

// --------------------------------------------------------------------------
// Markov baseline: add-one smoothed first-order transitions; unseen contexts
// fall back to the global location-frequency distribution.

class MarkovPredictor {
public:
    MarkovPredictor(const std::vector<Trajectory>& train, std::size_t n_locations)
        : n_(n_locations), counts_(n_locations), freq_(n_locations, 0) {
        for (const auto& t : train)
            for (std::size_t i = 0; i < t.points.size(); ++i) {
                ++freq_[static_cast<std::size_t>(t.points[i].location_id)];
                if (i + 1 < t.points.size())
                    ++counts_[static_cast<std::size_t>(t.points[i].location_id)]
                             [t.points[i + 1].location_id];
            }
    }

    // Unnormalized scores; add-one smoothing keeps seen-context rows strictly
    // ordered by count.
    std::vector<double> scores(std::int64_t context) const {
        std::vector<double> row(n_, 1.0);
        const auto& m = counts_[static_cast<std::size_t>(context)];
        if (m.empty()) {
            for (std::size_t j = 0; j < n_; ++j) row[j] = static_cast<double>(freq_[j]);
            return row;
        }
        for (const auto& [loc, c] : m) row[static_cast<std::size_t>(loc)] += c;
        return row;
    }

    bool context_seen(std::int64_t context) const {
        return !counts_[static_cast<std::size_t>(context)].empty();
    }

private:
    std::size_t n_;
    std::vector<std::map<std::int64_t, long long>> counts_;
    std::vector<long long> freq_;
};

inline CityMetrics markov_baseline_city(const CityData& cd) {
    MarkovPredictor pred(cd.train, cd.features.n_locations);
    std::vector<std::vector<double>> rows;
    std::vector<std::int64_t> targets;
    for (const auto& t : cd.test)
        for (std::size_t i = 0; i + 1 < t.points.size(); ++i) {
            rows.push_back(pred.scores(t.points[i].location_id));
            targets.push_back(t.points[i + 1].location_id);
        }
    CityMetrics m;
    if (rows.empty()) return m;
    m.samples = rows.size();
    m.acc1 = acc_at_k(rows, targets, 1);
    m.acc3 = acc_at_k(rows, targets, 3);
    m.acc5 = acc_at_k(rows, targets, 5);
    return m;
}

inline EvalReport markov_baseline(const MultiCityCorpus& corpus) {
    EvalReport r;
    for (const auto& [id, cd] : corpus.cities) r.per_city[id] = markov_baseline_city(cd);
    return r;
}

// --------------------------------------------------------------------------
// Linear baseline: one linear map from the current position's features
// (P, G, R one-hot, time-slot one-hot) to N-way logits, trained with the
// same optimizer and loss as the model.

struct LinearBaselineConfig {
    double lr = 0.05;
    std::size_t epochs = 60;
    std::size_t batch_size = 256;
    std::uint64_t seed = 1;
};

namespace detail {

constexpr std::size_t kLinearFeatureDim = kPoiVectorLen + 2 + kPopularityRanks + kTimeSlots;

inline void linear_features(const CityFeatures& f, std::int64_t loc, int slot, double* out) {
    std::fill(out, out + kLinearFeatureDim, 0.0);
    auto l = static_cast<std::size_t>(loc);
    std::copy(f.poi.begin() + l * kPoiVectorLen, f.poi.begin() + (l + 1) * kPoiVectorLen, out);
    out[kPoiVectorLen] = f.geo[l * 2];
    out[kPoiVectorLen + 1] = f.geo[l * 2 + 1];
    out[kPoiVectorLen + 2 + static_cast<std::size_t>(f.rank[l])] = 1.0;
    out[kPoiVectorLen + 2 + kPopularityRanks + static_cast<std::size_t>(slot)] = 1.0;
}

}  // namespace detail

inline CityMetrics linear_baseline_city(const CityData& cd, const LinearBaselineConfig& cfg) {
    std::size_t F = detail::kLinearFeatureDim, N = cd.features.n_locations;
    std::vector<double> xs;
    std::vector<std::int64_t> ys;
    for (const auto& t : cd.train)
        for (std::size_t i = 0; i + 1 < t.points.size(); ++i) {
            xs.resize(xs.size() + F);
            detail::linear_features(cd.features, t.points[i].location_id, t.points[i].time_slot,
                                    xs.data() + xs.size() - F);
            ys.push_back(t.points[i + 1].location_id);
        }

    Rng rng = Rng(cfg.seed).stream("linear_baseline");
    Tensor w = init_linear({F, N}, F, rng);
    Tensor b = Tensor::zeros({N}, true);
    OptimConfig ocfg;
    ocfg.lr = cfg.lr;
    AdamW opt({w, b}, ocfg);

    std::size_t samples = ys.size();
    if (samples > 0) {
        std::vector<std::size_t> order(samples);
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            rng.shuffle(order);
            for (std::size_t off = 0; off < samples; off += cfg.batch_size) {
                std::size_t bs = std::min(cfg.batch_size, samples - off);
                std::vector<double> bx(bs * F);
                IntArray by({bs});
                for (std::size_t i = 0; i < bs; ++i) {
                    std::copy(xs.begin() + order[off + i] * F, xs.begin() + (order[off + i] + 1) * F,
                              bx.begin() + i * F);
                    by.v[i] = ys[order[off + i]];
                }
                Tensor logits = add(matmul(Tensor::constant({bs, F}, std::move(bx)), w), b);
                Tensor loss = cross_entropy(logits, by);
                opt.zero_grad();
                backward(loss);
                opt.step();
            }
        }
    }

    CityMetrics m;
    std::vector<std::vector<double>> rows;
    std::vector<std::int64_t> targets;
    std::vector<double> feat(F);
    for (const auto& t : cd.test)
        for (std::size_t i = 0; i + 1 < t.points.size(); ++i) {
            detail::linear_features(cd.features, t.points[i].location_id, t.points[i].time_slot,
                                    feat.data());
            std::vector<double> row(N);
            for (std::size_t j = 0; j < N; ++j) {
                double s = b.values()[j];
                for (std::size_t k = 0; k < F; ++k) s += feat[k] * w.values()[k * N + j];
                row[j] = s;
            }
            rows.push_back(std::move(row));
            targets.push_back(t.points[i + 1].location_id);
        }
    if (rows.empty()) return m;
    m.samples = rows.size();
    m.acc1 = acc_at_k(rows, targets, 1);
    m.acc3 = acc_at_k(rows, targets, 3);
    m.acc5 = acc_at_k(rows, targets, 5);
    return m;
}

inline EvalReport linear_baseline(const MultiCityCorpus& corpus, const LinearBaselineConfig& cfg) {
    EvalReport r;
    for (const auto& [id, cd] : corpus.cities) r.per_city[id] = linear_baseline_city(cd, cfg);
    return r;
}

// --------------------------------------------------------------------------
// Joint vs separate training under identical budgets and seeds.

struct CompareArm {
    EvalReport test_report;
    std::vector<double> val_loss_curve;  // city-mean for joint; single city otherwise
};

struct CompareResult {
    // seed -> arm; separate arms keyed "separate:<city>"
    std::map<std::uint64_t, std::map<std::string, CompareArm>> by_seed;

    std::string delta_table() const {
        std::ostringstream os;
        os << "seed,city,joint_acc1,separate_acc1,delta_acc1\n";
        for (const auto& [seed, arms] : by_seed) {
            const auto& joint = arms.at("joint").test_report.per_city;
            for (const auto& [city, jm] : joint) {
                auto it = arms.find("separate:" + city);
                if (it == arms.end()) continue;
                double sep = it->second.test_report.per_city.at(city).acc1;
                os << seed << "," << city << "," << fmt_g17(jm.acc1) << "," << fmt_g17(sep) << ","
                   << fmt_g17(jm.acc1 - sep) << "\n";
            }
        }
        return os.str();
    }
};

inline MultiCityCorpus single_city_corpus(const MultiCityCorpus& corpus, const std::string& id) {
    MultiCityCorpus out;
    out.cities[id] = corpus.city(id);
    return out;
}

inline CompareResult compare_joint_vs_separate(const MultiCityCorpus& corpus,
                                               const ModelConfig& mcfg, const TrainConfig& base,
                                               const std::vector<std::uint64_t>& seeds,
                                               bool verbose = false) {
    if (corpus.cities.size() < 2)
        throw data_error("compare requires at least two cities");
    CompareResult result;
    for (auto seed : seeds) {
        TrainConfig tcfg = base;
        tcfg.seed = seed;
        TrainResult joint = train_loop(corpus, mcfg, tcfg, verbose);
        CompareArm jarm;
        jarm.test_report = evaluate(joint.model, corpus, "test", tcfg.batch_size, mcfg.max_seq_len);
        jarm.val_loss_curve = joint.val_loss_curve;
        result.by_seed[seed]["joint"] = std::move(jarm);
        for (const auto& id : corpus.city_ids()) {
            MultiCityCorpus solo = single_city_corpus(corpus, id);
            TrainResult sep = train_loop(solo, mcfg, tcfg, verbose);
            CompareArm sarm;
            sarm.test_report = evaluate(sep.model, solo, "test", tcfg.batch_size, mcfg.max_seq_len);
            sarm.val_loss_curve = sep.val_loss_curve;
            result.by_seed[seed]["separate:" + id] = std::move(sarm);
        }
    }
    return result;
}

inline void write_loss_curves_csv(const CompareResult& result, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw data_error("cannot write loss curves: " + path);
    f << "seed,arm,epoch,val_loss\n";
    for (const auto& [seed, arms] : result.by_seed)
        for (const auto& [arm, data] : arms)
            for (std::size_t e = 0; e < data.val_loss_curve.size(); ++e)
                f << seed << "," << arm << "," << (e + 1) << ","
                  << fmt_g17(data.val_loss_curve[e]) << "\n";
}

// --------------------------------------------------------------------------
// Exports

// CSV `city,location_id,stage,v_0..v_{d-1}`; stage "pre" = encoder output
// E_l, stage "post" = DCN output L. Projection to 2-D is left to external
// tools.
inline void export_embeddings(const UniMoveModel& model, const MultiCityCorpus& corpus,
                              const std::string& path) {
    std::ofstream f(path);
    if (!f) throw data_error("cannot write embeddings: " + path);
    std::size_t d = model.config().d;
    f << "city,location_id,stage";
    for (std::size_t i = 0; i < d; ++i) f << ",v_" << i;
    f << "\n";
    for (const auto& [id, cd] : corpus.cities) {
        Tensor pre = model.encoder().encode_city(cd.features);
        Tensor post = model.dcn().forward(pre);
        for (auto [stage, t] : {std::pair<const char*, Tensor*>{"pre", &pre}, {"post", &post}}) {
            for (std::size_t loc = 0; loc < cd.features.n_locations; ++loc) {
                f << id << "," << loc << "," << stage;
                for (std::size_t i = 0; i < d; ++i)
                    f << "," << fmt_g17(t->values()[loc * d + i]);
                f << "\n";
            }
        }
    }
}

// CSV `layer,city,expert,mean_gate_weight` from eval-mode forwards over a split.
inline void export_expert_usage(const UniMoveModel& model, const MultiCityCorpus& corpus,
                                const std::string& split, std::size_t batch_size,
                                const std::string& path) {
    std::ofstream f(path);
    if (!f) throw data_error("cannot write expert usage: " + path);
    f << "layer,city,expert,mean_gate_weight\n";
    for (const auto& [id, cd] : corpus.cities) {
        MoeUsage usage;
        evaluate_city(model, cd, split, batch_size, model.config().max_seq_len, &usage);
        for (std::size_t layer = 0; layer < model.config().layers; ++layer) {
            auto means = usage.mean_weights(layer);
            for (std::size_t e = 0; e < means.size(); ++e)
                f << layer << "," << id << "," << e << "," << fmt_g17(means[e]) << "\n";
        }
    }
}

}  // namespace unimove
