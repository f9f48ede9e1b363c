// unimove: generate synthetic mobility corpora, preprocess, train the
// dual-tower model, evaluate, and run baselines and analyses.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "unimove/config.hpp"
#include "unimove/data.hpp"
#include "unimove/eval.hpp"
#include "unimove/model.hpp"
#include "unimove/synth.hpp"
#include "unimove/train.hpp"

namespace fs = std::filesystem;
using namespace unimove;

namespace {

const std::vector<std::string> kRunConfigKeys = {
    "d", "layers", "heads", "experts", "top_k", "expert_hidden", "dcn_cross_layers",
    "dcn_hidden", "max_seq_len", "lr", "epochs", "patience", "batch_size", "weight_decay",
    "clip_norm", "seed", "window_days", "min_points", "split_seed",
};

const std::vector<std::string> kSynthSpecKeys = {
    "seed", "archetypes", "abstract_grid", "archetype_kind", "cities", "city.*",
};

Config load_run_config(const std::string& path, std::int64_t seed_override) {
    Config cfg = path.empty() ? Config() : Config::load(path);
    cfg.restrict_keys(kRunConfigKeys);
    if (seed_override >= 0) cfg.set("seed", std::to_string(seed_override));
    if (!cfg.has("seed")) throw usage_error("a seed is required (--seed or config)");
    return cfg;
}

PrepConfig prep_from(const Config& cfg) {
    PrepConfig p;
    p.window_days = static_cast<int>(cfg.get_int("window_days", 3));
    p.min_points = cfg.get_int("min_points", 5);
    p.max_seq_len = cfg.get_int("max_seq_len", 64);
    p.split_seed = static_cast<std::uint64_t>(cfg.get_int("split_seed", 1));
    return p;
}

// Every output directory carries the fully resolved config it was made with.
void echo_config(const Config& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    cfg.save((fs::path(out_dir) / "config_echo.txt").string());
}

Config resolved_config(const Config& cfg, const ModelConfig& m, const TrainConfig& t,
                       const PrepConfig& p) {
    Config out = cfg;
    out.set("d", std::to_string(m.d));
    out.set("layers", std::to_string(m.layers));
    out.set("heads", std::to_string(m.heads));
    out.set("experts", std::to_string(m.experts));
    out.set("top_k", std::to_string(m.top_k));
    out.set("expert_hidden", std::to_string(m.expert_hidden));
    out.set("dcn_cross_layers", std::to_string(m.dcn_cross_layers));
    out.set("dcn_hidden", std::to_string(m.dcn_hidden));
    out.set("max_seq_len", std::to_string(m.max_seq_len));
    out.set("lr", fmt_g17(t.lr));
    out.set("epochs", std::to_string(t.epochs));
    out.set("patience", std::to_string(t.patience));
    out.set("batch_size", std::to_string(t.batch_size));
    out.set("weight_decay", fmt_g17(t.weight_decay));
    out.set("clip_norm", fmt_g17(t.clip_norm));
    out.set("seed", std::to_string(t.seed));
    out.set("window_days", std::to_string(p.window_days));
    out.set("min_points", std::to_string(p.min_points));
    out.set("split_seed", std::to_string(p.split_seed));
    return out;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path);
    if (!f) throw data_error("cannot write " + path);
    f << content;
}

void write_report_csv(const EvalReport& report, const std::string& split,
                      const std::string& path) {
    std::ofstream f(path);
    if (!f) throw data_error("cannot write " + path);
    f << "epoch,split,city,loss,acc1,acc3,acc5\n";
    for (const auto& [city, m] : report.per_city)
        f << "0," << split << "," << city << "," << fmt_g17(m.loss) << "," << fmt_g17(m.acc1)
          << "," << fmt_g17(m.acc3) << "," << fmt_g17(m.acc5) << "\n";
}

int run(int argc, char** argv) {
    CLI::App app{"UniMove-style multi-city next-location prediction"};
    app.require_subcommand(1);

    std::string spec_path, config_path, corpus_dir, out_dir, checkpoint_path;
    std::string city, split = "test", baseline_kind = "markov", seeds_csv = "1,2,3";
    std::int64_t seed_override = -1;
    bool verbose = false;

    auto add_common = [&](CLI::App* cmd, bool needs_corpus) {
        cmd->add_option("--config", config_path, "flat key=value config file");
        cmd->add_option("--seed", seed_override, "overrides the config seed");
        cmd->add_flag("--verbose", verbose, "progress to stderr");
        if (needs_corpus)
            cmd->add_option("--corpus", corpus_dir, "corpus directory")->required();
    };

    auto* c_synth = app.add_subcommand("synth", "generate a synthetic corpus");
    c_synth->add_option("--spec", spec_path, "synth spec file")->required();
    c_synth->add_option("--out", out_dir, "output corpus directory")->required();
    c_synth->add_option("--seed", seed_override, "overrides the spec seed");

    auto* c_prep = app.add_subcommand("preprocess", "window, filter and split raw trajectories");
    add_common(c_prep, true);
    c_prep->add_option("--out", out_dir, "output directory")->required();

    auto* c_train = app.add_subcommand("train", "train the model");
    add_common(c_train, true);
    c_train->add_option("--out", out_dir, "output directory")->required();

    auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(c_eval, true);
    c_eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    c_eval->add_option("--split", split, "train|val|test (default test)");
    c_eval->add_option("--out", out_dir, "optional output directory");

    auto* c_base = app.add_subcommand("baseline", "run a baseline predictor");
    add_common(c_base, true);
    c_base->add_option("--kind", baseline_kind, "markov|linear")->required();
    c_base->add_option("--out", out_dir, "optional output directory");

    auto* c_cmp = app.add_subcommand("compare", "joint vs separate training");
    add_common(c_cmp, true);
    c_cmp->add_option("--seeds", seeds_csv, "comma-separated seeds (default 1,2,3)");
    c_cmp->add_option("--out", out_dir, "output directory")->required();

    auto* c_moe = app.add_subcommand("inspect-moe", "dump expert-usage statistics");
    add_common(c_moe, true);
    c_moe->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    c_moe->add_option("--split", split, "train|val|test (default test)");
    c_moe->add_option("--out", out_dir, "output directory")->required();

    auto* c_emb = app.add_subcommand("export-emb", "export location embeddings");
    add_common(c_emb, true);
    c_emb->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    c_emb->add_option("--out", out_dir, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    if (c_synth->parsed()) {
        Config raw = Config::load(spec_path);
        raw.restrict_keys(kSynthSpecKeys);
        if (seed_override >= 0) raw.set("seed", std::to_string(seed_override));
        SynthSpec spec = SynthSpec::from_config(raw);
        generate(spec, out_dir);
        echo_config(raw, out_dir);
        std::printf("generated %zu cities under %s\n", spec.cities.size(), out_dir.c_str());
        return 0;
    }

    Config cfg = load_run_config(config_path, seed_override);
    PrepConfig prep = prep_from(cfg);
    ModelConfig mcfg = ModelConfig::from_config(cfg);
    TrainConfig tcfg = TrainConfig::from_config(cfg);
    Config resolved = resolved_config(cfg, mcfg, tcfg, prep);

    if (c_prep->parsed()) {
        MultiCityCorpus corpus = load_corpus(corpus_dir, prep);
        for (const auto& [id, cd] : corpus.cities) {
            fs::path dir = fs::path(out_dir) / id;
            fs::create_directories(dir);
            fs::copy_file(fs::path(corpus_dir) / id / "locations.csv", dir / "locations.csv",
                          fs::copy_options::overwrite_existing);
            save_trajectories((dir / "train.txt").string(), cd.train);
            save_trajectories((dir / "val.txt").string(), cd.val);
            save_trajectories((dir / "test.txt").string(), cd.test);
            std::printf("%s: %zu train / %zu val / %zu test windows\n", id.c_str(),
                        cd.train.size(), cd.val.size(), cd.test.size());
        }
        echo_config(resolved, out_dir);
        return 0;
    }

    MultiCityCorpus corpus = load_corpus(corpus_dir, prep);

    if (c_train->parsed()) {
        TrainResult result = train_loop(corpus, mcfg, tcfg, verbose);
        fs::create_directories(out_dir);
        CheckpointMeta meta;
        meta.config_hash = mcfg.hash();
        meta.corpus_hash = corpus_manifest_hash(corpus);
        meta.epoch = static_cast<std::int64_t>(result.best_epoch);
        save_checkpoint((fs::path(out_dir) / "checkpoint.bin").string(), result.model, nullptr,
                        meta);
        write_file((fs::path(out_dir) / "metrics.csv").string(), result.metrics_csv);
        echo_config(resolved, out_dir);
        std::cout << result.final_val_report.table("validation (best epoch " +
                                                   std::to_string(result.best_epoch) + ")");
        return 0;
    }

    if (c_eval->parsed() || c_moe->parsed() || c_emb->parsed()) {
        UniMoveModel model(mcfg, tcfg.seed);
        load_checkpoint(checkpoint_path, model, nullptr, mcfg.hash());
        if (c_eval->parsed()) {
            EvalReport report = evaluate(model, corpus, split, tcfg.batch_size, mcfg.max_seq_len);
            std::cout << report.table("model on " + split);
            if (!out_dir.empty()) {
                fs::create_directories(out_dir);
                write_report_csv(report, split, (fs::path(out_dir) / "report.csv").string());
                echo_config(resolved, out_dir);
            }
        } else if (c_moe->parsed()) {
            fs::create_directories(out_dir);
            export_expert_usage(model, corpus, split, tcfg.batch_size,
                                (fs::path(out_dir) / "expert_usage.csv").string());
            echo_config(resolved, out_dir);
        } else {
            fs::create_directories(out_dir);
            export_embeddings(model, corpus, (fs::path(out_dir) / "embeddings.csv").string());
            echo_config(resolved, out_dir);
        }
        return 0;
    }

    if (c_base->parsed()) {
        EvalReport report;
        if (baseline_kind == "markov") {
            report = markov_baseline(corpus);
        } else if (baseline_kind == "linear") {
            LinearBaselineConfig lcfg;
            lcfg.seed = tcfg.seed;
            report = linear_baseline(corpus, lcfg);
        } else {
            throw usage_error("unknown baseline kind: " + baseline_kind);
        }
        std::cout << report.table(baseline_kind + " baseline on test");
        if (!out_dir.empty()) {
            fs::create_directories(out_dir);
            write_report_csv(report, "test", (fs::path(out_dir) / "report.csv").string());
            echo_config(resolved, out_dir);
        }
        return 0;
    }

    if (c_cmp->parsed()) {
        std::vector<std::uint64_t> seeds;
        Config tmp;
        tmp.set("seeds", seeds_csv);
        for (const auto& s : tmp.get_list("seeds"))
            seeds.push_back(static_cast<std::uint64_t>(std::stoull(s)));
        CompareResult result = compare_joint_vs_separate(corpus, mcfg, tcfg, seeds, verbose);
        fs::create_directories(out_dir);
        write_file((fs::path(out_dir) / "delta.csv").string(), result.delta_table());
        write_loss_curves_csv(result, (fs::path(out_dir) / "loss_curves.csv").string());
        echo_config(resolved, out_dir);
        std::cout << result.delta_table();
        return 0;
    }

    throw usage_error("no subcommand handled");
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return static_cast<int>(e.kind());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
