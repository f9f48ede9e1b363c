#pragma once

// Dual-tower model: location tower supplies candidate embeddings L for a
// city, trajectory tower supplies intent embeddings I, and the score is the
// inner product of each intent vector with every candidate row.

#include <string>
#include <vector>

#include "unimove/config.hpp"
#include "unimove/data.hpp"
#include "unimove/loctower.hpp"
#include "unimove/trajtower.hpp"

namespace unimove {

struct ModelConfig {
    std::size_t d = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t experts = 4;
    std::size_t top_k = 2;
    std::size_t expert_hidden = 0;    // 0 -> 4d
    std::size_t dcn_cross_layers = 2;
    std::size_t dcn_hidden = 0;       // 0 -> 2d
    std::size_t max_seq_len = 64;

    static ModelConfig from_config(const Config& cfg) {
        ModelConfig m;
        m.d = cfg.get_int("d", 64);
        m.layers = cfg.get_int("layers", 2);
        m.heads = cfg.get_int("heads", 4);
        m.experts = cfg.get_int("experts", 4);
        m.top_k = cfg.get_int("top_k", 2);
        m.expert_hidden = cfg.get_int("expert_hidden", 0);
        m.dcn_cross_layers = cfg.get_int("dcn_cross_layers", 2);
        m.dcn_hidden = cfg.get_int("dcn_hidden", 0);
        m.max_seq_len = cfg.get_int("max_seq_len", 64);
        return m;
    }

    std::string canonical() const {
        std::ostringstream os;
        os << "d=" << d << ";layers=" << layers << ";heads=" << heads << ";experts=" << experts
           << ";top_k=" << top_k << ";expert_hidden=" << expert_hidden
           << ";dcn_cross_layers=" << dcn_cross_layers << ";dcn_hidden=" << dcn_hidden
           << ";max_seq_len=" << max_seq_len;
        return os.str();
    }
    std::uint64_t hash() const { return fnv1a(canonical()); }

    MoeTransformerConfig tower_config() const {
        MoeTransformerConfig t;
        t.d = d;
        t.layers = layers;
        t.heads = heads;
        t.experts = experts;
        t.top_k = top_k;
        t.expert_hidden = expert_hidden;
        return t;
    }
};

// logits[b,t,n] = sum_i I[b,t,i] * L[n,i]
inline Tensor score(const Tensor& intent, const Tensor& candidates) {
    if (intent.shape().back() != candidates.shape().back())
        throw data_error("score: dimension mismatch " + shape_str(intent.shape()) + " vs " +
                         shape_str(candidates.shape()));
    return matmul(intent, transpose(candidates));
}

// Mean over supervised positions of -log_softmax(logits)[target].
inline Tensor cross_entropy(const Tensor& logits, const IntArray& targets) {
    std::size_t supervised = 0;
    for (auto t : targets.v)
        if (t != kIgnoreTarget) ++supervised;
    if (supervised == 0) throw data_error("loss: batch has no supervised position");
    Tensor picked = gather_last(log_softmax(logits), targets, kIgnoreTarget);
    return scale(sum_all(picked), -1.0 / static_cast<double>(supervised));
}

class UniMoveModel {
public:
    UniMoveModel() = default;

    UniMoveModel(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
        Rng rng = Rng(init_seed).stream("init");
        encoder_ = LocationEncoder(cfg.d, rng.stream("encoder"));
        std::size_t dcn_hidden = cfg.dcn_hidden ? cfg.dcn_hidden : 2 * cfg.d;
        Rng dcn_rng = rng.stream("dcn");
        dcn_ = Dcn(cfg.d, dcn_hidden, cfg.dcn_cross_layers, dcn_rng);
        tower_ = TrajectoryTower(cfg.tower_config(), rng.stream("tower"));
    }

    const ModelConfig& config() const { return cfg_; }
    const LocationEncoder& encoder() const { return encoder_; }
    const Dcn& dcn() const { return dcn_; }
    const TrajectoryTower& tower() const { return tower_; }

    // L for all N locations of a city; parameter-dependent, recomputed per
    // forward pass.
    Tensor location_embeddings(const CityFeatures& f) const {
        return dcn_.forward(encoder_.encode_city(f));
    }

    Tensor intent(const PaddedBatch& batch, const CityFeatures& f, bool train_mode,
                  Rng* noise_rng, MoeUsage* usage = nullptr) const {
        Tensor e_l = encoder_.encode_batch(batch, f);
        return tower_.forward(e_l, batch.time_slots, batch.real_mask, train_mode, noise_rng,
                              usage);
    }

    Tensor batch_loss(const PaddedBatch& batch, const CityFeatures& f, bool train_mode,
                      Rng* noise_rng, MoeUsage* usage = nullptr) const {
        Tensor I = intent(batch, f, train_mode, noise_rng, usage);
        Tensor L = location_embeddings(f);
        return cross_entropy(score(I, L), batch.target_ids);
    }

    ParamList parameters() const {
        ParamList out;
        encoder_.collect(out, "encoder");
        dcn_.collect(out, "dcn");
        tower_.collect(out, "tower");
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (auto& [name, t] : parameters()) n += t.numel();
        return n;
    }

private:
    ModelConfig cfg_;
    LocationEncoder encoder_;
    Dcn dcn_;
    TrajectoryTower tower_;
};

}  // namespace unimove
