// Acceptance harness: one pass/fail line per criterion, exit code = number
// of failed criteria. Each criterion is independent and self-timed.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "unimove/eval.hpp"
#include "unimove/synth.hpp"
#include "unimove/train.hpp"

using namespace unimove;

namespace {

struct Harness {
    int failures = 0;

    void criterion(const std::string& name, double budget_s,
                   const std::function<void(std::vector<std::string>&)>& body) {
        auto start = std::chrono::steady_clock::now();
        std::vector<std::string> problems;
        try {
            body(problems);
        } catch (const std::exception& e) {
            problems.push_back(std::string("exception: ") + e.what());
        }
        double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                             .count();
        if (budget_s > 0 && elapsed > budget_s)
            problems.push_back("runtime " + std::to_string(elapsed) + " s exceeds budget " +
                               std::to_string(budget_s) + " s");
        if (problems.empty()) {
            std::printf("[PASS] %s (%.1f s)\n", name.c_str(), elapsed);
        } else {
            ++failures;
            std::printf("[FAIL] %s (%.1f s)\n", name.c_str(), elapsed);
            for (const auto& p : problems) std::printf("       - %s\n", p.c_str());
        }
        std::fflush(stdout);
    }
};

void expect(std::vector<std::string>& problems, bool ok, const std::string& msg) {
    if (!ok) problems.push_back(msg);
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Shared corpus builders

MultiCityCorpus rhythm_corpus(std::vector<CitySpec> cities, std::uint64_t seed,
                              std::size_t archetypes = 2, std::size_t grid = 3,
                              ArchetypeKind kind = ArchetypeKind::Rhythm) {
    SynthSpec spec;
    spec.seed = seed;
    spec.archetypes = archetypes;
    spec.abstract_grid = grid;
    spec.kind = kind;
    spec.cities = std::move(cities);
    spec.validate();
    auto arch = detail::build_archetypes(spec);
    MultiCityCorpus corpus;
    for (const auto& cs : spec.cities) {
        auto city = generate_city(spec, cs, arch);
        CityData cd;
        cd.city_id = cs.id;
        cd.locations = city.locations;
        cd.features = build_features(cs.id, cd.locations);
        std::vector<Trajectory> windows;
        for (const auto& t : city.trajectories)
            for (auto& w : window_split(t, 3, 5)) windows.push_back(std::move(w));
        split_users(windows, seed, cd.train, cd.val, cd.test);
        corpus.cities[cs.id] = std::move(cd);
    }
    return corpus;
}

CitySpec city_spec(const std::string& id, std::size_t rows, std::size_t cols, std::size_t users,
                   int days, std::vector<double> mix, double lon0 = 110.0) {
    CitySpec cs;
    cs.id = id;
    cs.rows = rows;
    cs.cols = cols;
    cs.users = users;
    cs.days = days;
    cs.mix = std::move(mix);
    cs.lon0 = lon0;
    return cs;
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness on the small dense-gated configuration

void gradient_correctness(std::vector<std::string>& problems) {
    ModelConfig mcfg;
    mcfg.d = 8;
    mcfg.layers = 1;
    mcfg.heads = 2;
    mcfg.experts = 2;
    mcfg.top_k = 2;  // every expert active: the loss is smooth in all weights
    mcfg.expert_hidden = 8;
    mcfg.dcn_hidden = 8;
    mcfg.max_seq_len = 4;
    UniMoveModel model(mcfg, 17);

    auto corpus = rhythm_corpus({city_spec("g", 3, 4, 8, 4, {1.0, 1.0})}, 17);
    const CityData& cd = corpus.cities.begin()->second;
    Trajectory t = cd.train[0];
    t.points.resize(3);  // 3 real points + EOS fills T = 4
    PaddedBatch batch = pad_batch({t}, 4);

    auto loss = [&] { return model.batch_loss(batch, cd.features, false, nullptr); };
    ParamList params = model.parameters();
    double worst = 0.0;
    std::string worst_name;
    const double eps = 1e-5;
    for (auto& [name, p] : params) {
        p.zero_grad();
        backward(loss());
        std::vector<double> analytic = p.grad();
        for (std::size_t i = 0; i < p.numel(); ++i) {
            double keep = p.values()[i];
            p.values()[i] = keep + eps;
            double up = loss().item();
            p.values()[i] = keep - eps;
            double down = loss().item();
            p.values()[i] = keep;
            double fd = (up - down) / (2.0 * eps);
            double err = std::abs(fd - analytic[i]) /
                         std::max({std::abs(fd), std::abs(analytic[i]), 1.0});
            if (err > worst) {
                worst = err;
                worst_name = name;
            }
        }
    }
    expect(problems, worst < 1e-4,
           "max relative gradient error " + num(worst) + " at " + worst_name);
}

// ---------------------------------------------------------------------------
// 2. Architectural invariants

void architectural_invariants(std::vector<std::string>& problems) {
    Rng rng(23);
    const std::size_t d = 16, E = 4, k = 2;

    {  // gate sparsity and simplex sum
        Rng init(1);
        Gate gate(d, E, k, init);
        std::vector<double> xv(32 * d);
        for (auto& v : xv) v = rng.normal(0.0, 1.0);
        Tensor w = gate.forward(Tensor::constant({32, d}, xv), false, nullptr);
        for (std::size_t r = 0; r < 32; ++r) {
            double s = 0.0;
            std::size_t nz = 0;
            for (std::size_t e = 0; e < E; ++e) {
                double v = w.values()[r * E + e];
                if (v != 0.0) ++nz;
                s += v;
            }
            expect(problems, nz == k, "gate row has " + std::to_string(nz) + " active experts");
            expect(problems, std::abs(s - 1.0) <= 1e-12,
                   "gate row sum off by " + num(std::abs(s - 1.0)));
            if (!problems.empty() && problems.size() > 4) return;
        }
    }

    {  // sparse mixture equals the dense weighted sum
        MoeTransformerConfig cfg;
        cfg.d = d;
        cfg.layers = 1;
        cfg.heads = 2;
        cfg.experts = E;
        cfg.top_k = k;
        cfg.expert_hidden = d;
        Rng init(2);
        MoeLayer moe(cfg, init);
        std::vector<double> xv(2 * 5 * d);
        for (auto& v : xv) v = rng.normal(0.0, 1.0);
        Tensor x = Tensor::constant({2, 5, d}, xv);
        Tensor sparse = moe.forward(x, false, nullptr);
        Tensor w = moe.gate().forward(x, false, nullptr);
        Tensor dense;
        for (std::size_t e = 0; e < E; ++e) {
            Tensor c = mul(moe.experts()[e].forward(x), slice(w, 2, e, 1));
            dense = dense.defined() ? add(dense, c) : c;
        }
        double worst = 0.0;
        for (std::size_t i = 0; i < sparse.numel(); ++i)
            worst = std::max(worst, std::abs(sparse.values()[i] - dense.values()[i]));
        expect(problems, worst <= 1e-12, "sparse vs dense mixture differs by " + num(worst));
    }

    ModelConfig mcfg;
    mcfg.d = d;
    mcfg.layers = 2;
    mcfg.heads = 2;
    mcfg.experts = E;
    mcfg.top_k = k;
    mcfg.expert_hidden = d;
    mcfg.dcn_hidden = d;
    mcfg.max_seq_len = 16;
    UniMoveModel model(mcfg, 29);
    auto corpus = rhythm_corpus({city_spec("a", 4, 4, 16, 5, {1.0, 1.0}),
                                 city_spec("b", 4, 5, 12, 5, {0.5, 1.5}, 113.0)},
                                29);
    const CityData& ca = corpus.city("a");

    {  // causal + padding invariance end-to-end
        Trajectory t = ca.train[0];
        if (t.points.size() > 8) t.points.resize(8);
        std::size_t len = t.points.size();
        Trajectory t2 = t;
        t2.points.back().location_id = (t2.points.back().location_id + 1) %
                                       static_cast<std::int64_t>(ca.features.n_locations);
        Tensor o1 = model.intent(pad_batch({t}, 12), ca.features, false, nullptr);
        Tensor o2 = model.intent(pad_batch({t2}, 12), ca.features, false, nullptr);
        Tensor o3 = model.intent(pad_batch({t}, 16), ca.features, false, nullptr);
        double causal = 0.0, padding = 0.0;
        for (std::size_t p = 0; p + 1 < len; ++p)
            for (std::size_t j = 0; j < d; ++j) {
                causal = std::max(causal,
                                  std::abs(o1.values()[p * d + j] - o2.values()[p * d + j]));
            }
        for (std::size_t p = 0; p < len; ++p)
            for (std::size_t j = 0; j < d; ++j)
                padding = std::max(padding,
                                   std::abs(o1.values()[p * d + j] - o3.values()[p * d + j]));
        expect(problems, causal <= 1e-12, "future token leaked into the past by " + num(causal));
        expect(problems, padding <= 1e-12, "padding changed real positions by " + num(padding));
    }

    {  // encoder block layout via zeroed weights and marker biases
        LocationEncoder enc(d, Rng(3).stream("enc"));
        ParamList ep;
        enc.collect(ep, "e");
        for (auto& [n, t] : ep) {
            if (n == "e.w_poi" || n == "e.w_geo") std::fill(t.values().begin(), t.values().end(), 0.0);
            if (n == "e.b_poi") std::fill(t.values().begin(), t.values().end(), 1.0);
            if (n == "e.b_geo") std::fill(t.values().begin(), t.values().end(), 2.0);
            if (n == "e.rank_table") std::fill(t.values().begin(), t.values().end(), 3.0);
        }
        Tensor out = enc.encode_city(ca.features);
        bool ok = true;
        for (std::size_t j = 0; j < d; ++j) {
            double want = j < d / 2 ? 1.0 : (j < 3 * d / 4 ? 2.0 : 3.0);
            ok = ok && out.values()[j] == want;
        }
        expect(problems, ok, "encoder block layout is not d/2 + d/4 + d/4");
    }

    {  // score equals the scalar-loop oracle
        std::vector<double> iv(2 * 3 * d), lv(7 * d);
        for (auto& v : iv) v = rng.normal(0.0, 1.0);
        for (auto& v : lv) v = rng.normal(0.0, 1.0);
        Tensor I = Tensor::constant({2, 3, d}, iv);
        Tensor L = Tensor::constant({7, d}, lv);
        Tensor s = score(I, L);
        double worst = 0.0;
        for (std::size_t r = 0; r < 6; ++r)
            for (std::size_t n = 0; n < 7; ++n) {
                double ref = 0.0;
                for (std::size_t i = 0; i < d; ++i) ref += iv[r * d + i] * lv[n * d + i];
                worst = std::max(worst, std::abs(s.values()[r * 7 + n] - ref));
            }
        expect(problems, worst <= 1e-12, "score differs from scalar loop by " + num(worst));
    }

    {  // parameter count independent of the number of cities
        std::size_t before = model.parameter_count();
        for (const auto& [id, cd] : corpus.cities) (void)model.location_embeddings(cd.features);
        expect(problems, model.parameter_count() == before,
               "parameter count changed after encoding multiple cities");
    }
}

// ---------------------------------------------------------------------------
// 3. Preprocessing conformance

void preprocessing_conformance(std::vector<std::string>& problems) {
    {  // POI fraction normalization
        std::vector<long long> counts(kPoiCategories, 0);
        counts[0] = 3;
        counts[1] = 1;
        auto v = poi_vector(counts);
        expect(problems, v[kPoiCategories] == 0.75 && v[kPoiCategories + 1] == 0.25,
               "poi fractions are not counts over total");
        double s = 0.0;
        for (std::size_t i = 0; i < kPoiCategories; ++i) s += v[kPoiCategories + i];
        expect(problems, s == 1.0, "poi fractions do not sum to 1");
    }

    {  // percentile buckets on constructed cases
        std::vector<long long> visits(1000);
        for (std::size_t i = 0; i < 1000; ++i) visits[i] = 1000 - static_cast<long long>(i);
        auto r = popularity_rank(visits);
        expect(problems, r[0] == 0 && r[499] == 5 && r[999] == 7,
               "1000-location bucket assignment wrong");
        auto eq = popularity_rank(std::vector<long long>(10, 42));
        expect(problems, eq[0] == 2 && eq[1] == 3 && eq[9] == 7,
               "equal-count tie-breaking bucket assignment wrong");
    }

    {  // 48-slot rounding with midnight wrap
        expect(problems, time_slot(0.0) == 0, "slot of 00:00");
        expect(problems, time_slot(49620.0) == 28, "slot of 13:47");
        expect(problems, time_slot(85560.0) == 0, "slot of 23:46 must wrap to 0");
        expect(problems, time_slot(900.0) == 1 && time_slot(899.0) == 0,
               "half-up rounding at the 15-minute midpoint");
    }

    {  // 3-day sliding windows
        Trajectory t;
        t.user_id = "u";
        t.city_id = "c";
        for (int day = 0; day < 7; ++day)
            for (int p = 0; p < 5; ++p) t.points.push_back({p, 8 * p, day});
        expect(problems, window_split(t, 3, 5).size() == 5, "7 days must yield 5 windows");
        t.points.resize(4);
        expect(problems, window_split(t, 3, 5).empty(), "short windows must be dropped");
    }

    {  // 6:2:2 user-disjoint splits
        std::vector<Trajectory> windows;
        for (int u = 0; u < 50; ++u)
            for (int w = 0; w < 2; ++w) {
                Trajectory t;
                t.user_id = "user" + std::to_string(u);
                t.city_id = "c";
                for (int p = 0; p < 5; ++p) t.points.push_back({p, p, 0});
                windows.push_back(t);
            }
        std::vector<Trajectory> train, val, test;
        split_users(windows, 7, train, val, test);
        auto users = [](const std::vector<Trajectory>& v) {
            std::set<std::string> s;
            for (const auto& t : v) s.insert(t.user_id);
            return s;
        };
        auto tu = users(train), vu = users(val), su = users(test);
        expect(problems, tu.size() == 30 && vu.size() == 10 && su.size() == 10,
               "50 users must split 30/10/10");
        bool disjoint = true;
        for (const auto& u : vu) disjoint = disjoint && !tu.count(u);
        for (const auto& u : su) disjoint = disjoint && !tu.count(u) && !vu.count(u);
        expect(problems, disjoint, "split users overlap");
    }
}

// ---------------------------------------------------------------------------
// 4. Metric and baseline oracles

void metric_and_baseline_oracles(std::vector<std::string>& problems) {
    Rng rng(31);
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::size_t n = 2 + rng.below(30);
        std::vector<double> scores(n);
        for (auto& s : scores) s = static_cast<double>(rng.below(8));  // many ties
        auto target = static_cast<std::int64_t>(rng.below(n));
        std::size_t k = 1 + rng.below(n);

        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (scores[a] != scores[b]) return scores[a] > scores[b];
            return a < b;
        });
        bool oracle = false;
        for (std::size_t pos = 0; pos < k; ++pos)
            if (static_cast<std::int64_t>(order[pos]) == target) oracle = true;
        if (in_top_k(scores, target, k) != oracle) ++mismatches;
    }
    expect(problems, mismatches == 0,
           std::to_string(mismatches) + " of 1000 top-k instances disagree with the sort oracle");

    for (std::uint64_t seed : {401u, 402u}) {
        auto corpus = rhythm_corpus({city_spec("m", 5, 5, 60, 7, {1.0, 1.0})}, seed);
        double base = markov_baseline(corpus).per_city.at("m").acc1;
        double oracle = markov_oracle(corpus, "m").acc1;
        expect(problems, std::abs(base - oracle) <= 0.02,
               "markov baseline " + num(base) + " vs counting oracle " + num(oracle) +
                   " (seed " + std::to_string(seed) + ")");
    }
}

// ---------------------------------------------------------------------------
// 5. Overfit smoke test

void overfit_smoke(std::vector<std::string>& problems) {
    // Cycle-kind data is deterministic, so perfect memorization is possible;
    // rhythm-kind data has irreducibly stochastic legs.
    auto corpus = rhythm_corpus({city_spec("o", 6, 6, 16, 7, {1.0, 1.0})}, 47, 2, 3,
                                ArchetypeKind::Cycle);
    CityData& cd = corpus.cities.begin()->second;
    std::vector<Trajectory> all;
    for (auto* split : {&cd.train, &cd.val, &cd.test})
        for (auto& t : *split) all.push_back(t);
    all.resize(32);
    cd.train = all;
    cd.val = all;
    cd.test.clear();

    ModelConfig mcfg;
    mcfg.d = 32;
    mcfg.layers = 2;
    mcfg.heads = 4;
    mcfg.experts = 4;
    mcfg.top_k = 2;
    mcfg.expert_hidden = 64;
    mcfg.dcn_hidden = 64;
    mcfg.max_seq_len = 32;
    UniMoveModel model(mcfg, 47);
    std::vector<Tensor> tensors;
    for (auto& [n, t] : model.parameters()) tensors.push_back(t);
    OptimConfig ocfg;
    ocfg.lr = 3e-4;
    AdamW opt(tensors, ocfg);
    Rng run_rng(47);
    Rng schedule_rng = run_rng.stream("schedule");
    Rng noise_rng = run_rng.stream("gate_noise");

    double acc1 = 0.0, loss = 1e9;
    std::size_t epochs_used = 0;
    for (std::size_t epoch = 1; epoch <= 200; ++epoch) {
        epochs_used = epoch;
        for (const auto& ref : sample_schedule(corpus, 16, schedule_rng)) {
            std::vector<Trajectory> chunk;
            for (auto i : ref.indices) chunk.push_back(cd.train[i]);
            PaddedBatch batch = pad_batch(chunk, mcfg.max_seq_len);
            opt.zero_grad();
            backward(model.batch_loss(batch, cd.features, true, &noise_rng));
            opt.step();
        }
        if (epoch % 5 == 0 || epoch == 200) {
            CityMetrics m = evaluate_city(model, cd, "train", 16, mcfg.max_seq_len);
            acc1 = m.acc1;
            loss = m.loss;
            if (acc1 >= 0.9 && loss < 0.5) break;
        }
    }
    expect(problems, acc1 >= 0.9, "train acc@1 " + num(acc1) + " after " +
                                      std::to_string(epochs_used) + " epochs (need >= 0.9)");
    expect(problems, loss < 0.5, "train loss " + num(loss) + " (need < 0.5)");
}

// ---------------------------------------------------------------------------
// 6. Joint vs separate training on a shared-archetype corpus

void joint_vs_separate(std::vector<std::string>& problems) {
    auto corpus = rhythm_corpus({city_spec("big1", 6, 6, 48, 7, {1.0, 1.0}),
                                 city_spec("big2", 6, 6, 48, 7, {1.2, 0.8}, 113.0),
                                 city_spec("tiny", 6, 6, 8, 7, {1.0, 1.0}, 116.0)},
                                53);
    std::size_t tiny = corpus.city("tiny").train.size();
    std::size_t total = 0;
    for (const auto& [id, cd] : corpus.cities) total += cd.train.size();
    expect(problems, tiny * 10 <= total,
           "smallest city holds " + num(100.0 * tiny / total) + "% of training windows (need <= 10%)");

    ModelConfig mcfg;
    mcfg.d = 32;
    mcfg.layers = 2;
    mcfg.heads = 4;
    mcfg.experts = 4;
    mcfg.top_k = 2;
    mcfg.expert_hidden = 64;
    mcfg.dcn_hidden = 64;
    mcfg.max_seq_len = 32;
    TrainConfig tcfg;
    tcfg.epochs = 6;
    tcfg.patience = 6;
    tcfg.batch_size = 16;
    tcfg.lr = 1e-3;

    auto result = compare_joint_vs_separate(corpus, mcfg, tcfg, {1, 2, 3});
    double joint_sum = 0.0, sep_sum = 0.0;
    std::size_t curve_wins = 0;
    for (const auto& [seed, arms] : result.by_seed) {
        double j = arms.at("joint").test_report.per_city.at("tiny").acc1;
        double s = arms.at("separate:tiny").test_report.per_city.at("tiny").acc1;
        joint_sum += j;
        sep_sum += s;
        const auto& jc = arms.at("joint").test_report;
        (void)jc;
        const auto& jcurve = arms.at("joint").val_loss_curve;
        const auto& scurve = arms.at("separate:tiny").val_loss_curve;
        if (jcurve.size() >= 5 && scurve.size() >= 5 && jcurve[4] <= scurve[4]) ++curve_wins;
        std::printf("       seed %llu: tiny acc@1 joint %.4f vs separate %.4f\n",
                    static_cast<unsigned long long>(seed), j, s);
    }
    expect(problems, joint_sum >= sep_sum,
           "3-seed mean acc@1 on the smallest city: joint " + num(joint_sum / 3) +
               " < separate " + num(sep_sum / 3));
    expect(problems, curve_wins >= 2,
           "joint epoch-5 validation loss beat separate in only " +
               std::to_string(curve_wins) + " of 3 seeds");
}

// ---------------------------------------------------------------------------
// 7. Determinism and persistence

void determinism_and_persistence(std::vector<std::string>& problems) {
    auto corpus = rhythm_corpus({city_spec("d", 4, 4, 20, 5, {1.0, 1.0})}, 59);
    ModelConfig mcfg;
    mcfg.d = 16;
    mcfg.layers = 1;
    mcfg.heads = 2;
    mcfg.experts = 2;
    mcfg.top_k = 2;
    mcfg.expert_hidden = 16;
    mcfg.dcn_hidden = 16;
    mcfg.max_seq_len = 32;
    TrainConfig tcfg;
    tcfg.epochs = 2;
    tcfg.batch_size = 8;
    tcfg.seed = 59;

    auto r1 = train_loop(corpus, mcfg, tcfg);
    auto r2 = train_loop(corpus, mcfg, tcfg);
    expect(problems, r1.metrics_csv == r2.metrics_csv,
           "metrics logs differ between two identically seeded runs");

    auto path = (std::filesystem::temp_directory_path() / "unimove_acceptance_ckpt.bin").string();
    CheckpointMeta meta;
    meta.config_hash = mcfg.hash();
    save_checkpoint(path, r1.model, nullptr, meta);
    UniMoveModel restored(mcfg, 1234);
    load_checkpoint(path, restored, nullptr, mcfg.hash());
    double v1 = mean_city_loss(evaluate(r1.model, corpus, "val", 8, mcfg.max_seq_len));
    double v2 = mean_city_loss(evaluate(restored, corpus, "val", 8, mcfg.max_seq_len));
    expect(problems, v1 == v2, "round-tripped checkpoint changed the validation loss: " +
                                   num(v1) + " vs " + num(v2));
    std::filesystem::remove(path);
    std::filesystem::remove(path + ".manifest.txt");
}

// ---------------------------------------------------------------------------
// 8. Untrained-model sanity

void untrained_sanity(std::vector<std::string>& problems) {
    // Uniform random walks: every next location is drawn independently and
    // uniformly, so any predictor ignorant of the data hits with p = 1/N and
    // the hit count is binomial.
    const std::size_t N = 36;
    CitySpec cs = city_spec("u", 6, 6, 40, 5, {1.0});
    CityGeometry geom = make_geometry(cs);
    CityData cd;
    cd.city_id = "u";
    Rng rng(61);
    for (std::size_t i = 0; i < N; ++i) {
        LocationRecord r;
        r.location_id = static_cast<std::int64_t>(i);
        auto [lat, lon] = cell_centroid(geom, i);
        r.lat = lat;
        r.lon = lon;
        r.poi_counts.assign(kPoiCategories, 0);
        for (auto& c : r.poi_counts) c = static_cast<long long>(rng.below(6));
        r.visits = 1 + static_cast<long long>(rng.below(50));
        cd.locations.push_back(r);
    }
    cd.features = build_features("u", cd.locations);
    std::vector<Trajectory> all;
    for (std::size_t u = 0; u < 40; ++u) {
        Trajectory t;
        t.user_id = "u" + std::to_string(u);
        t.city_id = "u";
        for (int p = 0; p < 25; ++p)
            t.points.push_back({static_cast<std::int64_t>(rng.below(N)), (p * 9) % kTimeSlots,
                                (p * 9) / kTimeSlots});
        all.push_back(std::move(t));
    }
    split_users(all, 61, cd.train, cd.val, cd.test);
    MultiCityCorpus corpus;
    corpus.cities["u"] = std::move(cd);
    const CityData& city = corpus.cities.begin()->second;
    double n_locations = static_cast<double>(city.features.n_locations);

    ModelConfig mcfg;
    mcfg.d = 16;
    mcfg.layers = 1;
    mcfg.heads = 2;
    mcfg.experts = 2;
    mcfg.top_k = 2;
    mcfg.expert_hidden = 16;
    mcfg.dcn_hidden = 16;
    mcfg.max_seq_len = 32;
    UniMoveModel model(mcfg, 61);
    CityMetrics m = evaluate_city(model, city, "test", 16, mcfg.max_seq_len);
    double p = 1.0 / n_locations;
    double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(m.samples));
    expect(problems, std::abs(m.acc1 - p) <= 3.0 * sigma,
           "untrained acc@1 " + num(m.acc1) + " vs chance " + num(p) + " +- 3 sigma " +
               num(3.0 * sigma) + " over " + std::to_string(m.samples) + " samples");
}

}  // namespace

int main() {
    Harness h;
    h.criterion("1. gradient correctness vs central finite differences", 60, gradient_correctness);
    h.criterion("2. architectural invariants (gating, masking, layout, score)", 0,
                architectural_invariants);
    h.criterion("3. preprocessing conformance", 10, preprocessing_conformance);
    h.criterion("4. metric and baseline oracles", 120, metric_and_baseline_oracles);
    h.criterion("5. overfit smoke test (32 trajectories, one city)", 300, overfit_smoke);
    h.criterion("6. joint training helps the smallest city", 1800, joint_vs_separate);
    h.criterion("7. determinism and checkpoint persistence", 300, determinism_and_persistence);
    h.criterion("8. untrained model scores at chance level", 0, untrained_sanity);
    if (h.failures == 0) std::printf("all acceptance criteria passed\n");
    else std::printf("%d acceptance criteria failed\n", h.failures);
    return h.failures;
}
