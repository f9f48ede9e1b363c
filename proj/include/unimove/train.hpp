#pragma once

// Training loop over the multi-city corpus, evaluation over splits,
// checkpoint persistence, and the per-epoch metrics log.

#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "unimove/config.hpp"
#include "unimove/data.hpp"
#include "unimove/metrics.hpp"
#include "unimove/model.hpp"
#include "unimove/optim.hpp"

namespace unimove {

struct TrainConfig {
    double lr = 3e-4;
    std::size_t epochs = 50;
    std::size_t patience = 3;
    std::size_t batch_size = 16;
    double weight_decay = 0.01;
    double clip_norm = 1.0;
    std::uint64_t seed = 1;

    static TrainConfig from_config(const Config& cfg) {
        TrainConfig t;
        t.lr = cfg.get_double("lr", 3e-4);
        t.epochs = cfg.get_int("epochs", 50);
        t.patience = cfg.get_int("patience", 3);
        t.batch_size = cfg.get_int("batch_size", 16);
        t.weight_decay = cfg.get_double("weight_decay", 0.01);
        t.clip_norm = cfg.get_double("clip_norm", 1.0);
        if (!cfg.has("seed")) throw usage_error("config requires a seed");
        t.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
        return t;
    }

    OptimConfig optim() const {
        OptimConfig o;
        o.lr = lr;
        o.weight_decay = weight_decay;
        o.clip_norm = clip_norm;
        return o;
    }
};

// --------------------------------------------------------------------------
// Evaluation over a split (noise-free, deterministic)

inline const std::vector<Trajectory>& split_of(const CityData& cd, const std::string& split) {
    if (split == "train") return cd.train;
    if (split == "val") return cd.val;
    if (split == "test") return cd.test;
    throw usage_error("unknown split: " + split);
}

inline CityMetrics evaluate_city(const UniMoveModel& model, const CityData& cd,
                                 const std::string& split, std::size_t batch_size,
                                 std::size_t capacity, MoeUsage* usage = nullptr) {
    const auto& trajs = split_of(cd, split);
    CityMetrics m;
    if (trajs.empty()) return m;
    double loss_sum = 0.0;
    std::size_t hits1 = 0, hits3 = 0, hits5 = 0;
    for (std::size_t off = 0; off < trajs.size(); off += batch_size) {
        std::vector<Trajectory> chunk(trajs.begin() + off,
                                      trajs.begin() + std::min(off + batch_size, trajs.size()));
        PaddedBatch batch = pad_batch(chunk, capacity);
        Tensor I = model.intent(batch, cd.features, false, nullptr, usage);
        Tensor L = model.location_embeddings(cd.features);
        Tensor logits = score(I, L);
        Tensor lp = log_softmax(logits);
        std::size_t N = cd.features.n_locations;
        for (std::size_t r = 0; r < batch.target_ids.size(); ++r) {
            std::int64_t t = batch.target_ids.v[r];
            if (t == kIgnoreTarget) continue;
            const double* row = logits.values().data() + r * N;
            std::vector<double> scores(row, row + N);
            loss_sum += -lp.values()[r * N + static_cast<std::size_t>(t)];
            if (in_top_k(scores, t, 1)) ++hits1;
            if (in_top_k(scores, t, 3)) ++hits3;
            if (in_top_k(scores, t, 5)) ++hits5;
            ++m.samples;
        }
    }
    if (m.samples) {
        m.loss = loss_sum / m.samples;
        m.acc1 = static_cast<double>(hits1) / m.samples;
        m.acc3 = static_cast<double>(hits3) / m.samples;
        m.acc5 = static_cast<double>(hits5) / m.samples;
    }
    return m;
}

inline EvalReport evaluate(const UniMoveModel& model, const MultiCityCorpus& corpus,
                           const std::string& split, std::size_t batch_size,
                           std::size_t capacity, MoeUsage* usage = nullptr) {
    EvalReport report;
    for (const auto& [id, cd] : corpus.cities)
        report.per_city[id] = evaluate_city(model, cd, split, batch_size, capacity, usage);
    return report;
}

// Unweighted mean of per-city mean losses, so small cities are not drowned out.
inline double mean_city_loss(const EvalReport& report) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& [id, m] : report.per_city)
        if (m.samples) {
            sum += m.loss;
            ++n;
        }
    return n ? sum / n : 0.0;
}

// --------------------------------------------------------------------------
// Checkpoint: little-endian binary blob + text sidecar manifest

constexpr char kCkptMagic[8] = {'U', 'M', 'C', 'K', 'P', 'T', '0', '1'};

struct CheckpointMeta {
    std::uint64_t config_hash = 0;
    std::uint64_t corpus_hash = 0;
    std::int64_t epoch = 0;
};

namespace detail {
template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
void read_pod(std::istream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
}
}  // namespace detail

inline void save_checkpoint(const std::string& path, const UniMoveModel& model, AdamW* opt,
                            const CheckpointMeta& meta) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot write checkpoint: " + path);
    f.write(kCkptMagic, 8);
    detail::write_pod(f, meta.config_hash);
    detail::write_pod(f, meta.corpus_hash);
    detail::write_pod(f, meta.epoch);
    std::int64_t opt_step = opt ? opt->step_count() : -1;
    detail::write_pod(f, opt_step);
    ParamList params = model.parameters();
    detail::write_pod(f, static_cast<std::uint64_t>(params.size()));
    std::ofstream mf(path + ".manifest.txt");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& [name, t] = params[i];
        detail::write_pod(f, static_cast<std::uint64_t>(name.size()));
        f.write(name.data(), name.size());
        detail::write_pod(f, static_cast<std::uint64_t>(t.shape().size()));
        for (auto d : t.shape()) detail::write_pod(f, static_cast<std::uint64_t>(d));
        f.write(reinterpret_cast<const char*>(t.values().data()),
                t.values().size() * sizeof(double));
        if (opt) {
            f.write(reinterpret_cast<const char*>(opt->moment1()[i].data()),
                    t.numel() * sizeof(double));
            f.write(reinterpret_cast<const char*>(opt->moment2()[i].data()),
                    t.numel() * sizeof(double));
        }
        if (mf) mf << name << " " << shape_str(t.shape()) << "\n";
    }
}

inline CheckpointMeta load_checkpoint(const std::string& path, UniMoveModel& model, AdamW* opt,
                                      std::uint64_t expected_config_hash) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (std::memcmp(magic, kCkptMagic, 8) != 0)
        throw data_error("not a checkpoint file: " + path);
    CheckpointMeta meta;
    detail::read_pod(f, meta.config_hash);
    detail::read_pod(f, meta.corpus_hash);
    detail::read_pod(f, meta.epoch);
    std::int64_t opt_step = 0;
    detail::read_pod(f, opt_step);
    if (meta.config_hash != expected_config_hash)
        throw data_error("checkpoint config hash mismatch: file has " +
                         std::to_string(meta.config_hash) + ", expected " +
                         std::to_string(expected_config_hash));
    ParamList params = model.parameters();
    std::uint64_t count = 0;
    detail::read_pod(f, count);
    if (count != params.size())
        throw data_error("checkpoint parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& [name, t] = params[i];
        std::uint64_t len = 0;
        detail::read_pod(f, len);
        std::string fname(len, '\0');
        f.read(fname.data(), len);
        if (fname != name)
            throw data_error("checkpoint tensor order mismatch: " + fname + " vs " + name);
        std::uint64_t rank = 0;
        detail::read_pod(f, rank);
        Shape shape(rank);
        for (auto& d : shape) {
            std::uint64_t x;
            detail::read_pod(f, x);
            d = x;
        }
        if (shape != t.shape())
            throw data_error("checkpoint shape mismatch for " + name);
        f.read(reinterpret_cast<char*>(t.values().data()), t.numel() * sizeof(double));
        if (opt_step >= 0) {
            std::vector<double> m1(t.numel()), m2(t.numel());
            f.read(reinterpret_cast<char*>(m1.data()), t.numel() * sizeof(double));
            f.read(reinterpret_cast<char*>(m2.data()), t.numel() * sizeof(double));
            if (opt) {
                opt->moment1()[i] = std::move(m1);
                opt->moment2()[i] = std::move(m2);
            }
        }
    }
    if (opt && opt_step >= 0) opt->set_step_count(opt_step);
    if (!f) throw data_error("truncated checkpoint: " + path);
    return meta;
}

// --------------------------------------------------------------------------
// Training loop

struct TrainResult {
    UniMoveModel model;  // best-validation parameters
    std::size_t best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::vector<double> val_loss_curve;  // mean across cities, per epoch
    std::string metrics_csv;             // epoch,split,city,loss,acc1,acc3,acc5
    EvalReport final_val_report;
};

inline std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline TrainResult train_loop(const MultiCityCorpus& corpus, const ModelConfig& mcfg,
                              const TrainConfig& tcfg, bool verbose = false) {
    UniMoveModel model(mcfg, tcfg.seed);
    ParamList params = model.parameters();
    std::vector<Tensor> tensors;
    for (auto& [n, t] : params) tensors.push_back(t);
    AdamW opt(tensors, tcfg.optim());

    Rng run_rng(tcfg.seed);
    Rng schedule_rng = run_rng.stream("schedule");
    Rng noise_rng = run_rng.stream("gate_noise");

    std::ostringstream csv;
    csv << "epoch,split,city,loss,acc1,acc3,acc5\n";

    TrainResult result;
    std::vector<std::vector<double>> best_values;
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        auto schedule = sample_schedule(corpus, tcfg.batch_size, schedule_rng);
        std::map<std::string, std::pair<double, std::size_t>> train_loss;  // city -> (sum, n)
        for (const auto& ref : schedule) {
            const CityData& cd = corpus.city(ref.city_id);
            std::vector<Trajectory> chunk;
            for (auto i : ref.indices) chunk.push_back(cd.train[i]);
            PaddedBatch batch = pad_batch(chunk, mcfg.max_seq_len);
            opt.zero_grad();
            Tensor loss = model.batch_loss(batch, cd.features, true, &noise_rng);
            double lv = loss.item();
            if (!std::isfinite(lv))
                throw numerical_error("training diverged: non-finite loss at epoch " +
                                      std::to_string(epoch) + ", city " + ref.city_id);
            backward(loss);
            opt.step();
            auto& agg = train_loss[ref.city_id];
            agg.first += lv;
            agg.second += 1;
        }
        for (const auto& [city, agg] : train_loss)
            csv << epoch << ",train," << city << "," << fmt_g17(agg.first / agg.second)
                << ",,,\n";

        EvalReport val = evaluate(model, corpus, "val", tcfg.batch_size, mcfg.max_seq_len);
        for (const auto& [city, m] : val.per_city)
            csv << epoch << ",val," << city << "," << fmt_g17(m.loss) << "," << fmt_g17(m.acc1)
                << "," << fmt_g17(m.acc3) << "," << fmt_g17(m.acc5) << "\n";
        double val_loss = mean_city_loss(val);
        result.val_loss_curve.push_back(val_loss);
        if (verbose)
            std::fprintf(stderr, "epoch %zu: val loss %.6f\n", epoch, val_loss);

        if (val_loss < result.best_val_loss) {
            result.best_val_loss = val_loss;
            result.best_epoch = epoch;
            best_values.clear();
            for (auto& [n, t] : params) best_values.push_back(t.values());
            since_best = 0;
        } else if (++since_best >= tcfg.patience) {
            break;
        }
    }

    if (!best_values.empty())
        for (std::size_t i = 0; i < params.size(); ++i)
            params[i].second.values() = best_values[i];
    result.model = model;
    result.metrics_csv = csv.str();
    result.final_val_report =
        evaluate(model, corpus, "val", tcfg.batch_size, mcfg.max_seq_len);
    return result;
}

}  // namespace unimove
