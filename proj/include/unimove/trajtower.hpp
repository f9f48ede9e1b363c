#pragma once

// Trajectory Tower: stacked pre-norm transformer blocks with causal+padding
// masked multi-head attention and a noisy top-k mixture-of-experts layer in
// place of the FFN. Noise is training-only so evaluation stays deterministic.

#include <map>
#include <string>
#include <vector>

#include "unimove/data.hpp"
#include "unimove/loctower.hpp"
#include "unimove/rng.hpp"
#include "unimove/tensor.hpp"

namespace unimove {

struct MoeTransformerConfig {
    std::size_t d = 512;
    std::size_t layers = 8;
    std::size_t heads = 8;
    std::size_t experts = 4;
    std::size_t top_k = 2;
    std::size_t expert_hidden = 0;  // 0 -> 4d

    void validate() const {
        if (top_k < 1 || top_k > experts)
            throw data_error("top_k must be in [1, experts]");
        if (heads == 0 || d % heads != 0)
            throw data_error("embedding dimension must be divisible by head count");
    }
    std::size_t hidden() const { return expert_hidden ? expert_hidden : 4 * d; }
};

// Per-expert mean gate weight, keyed by layer; feeds the expert-usage dump.
struct MoeUsage {
    std::map<std::size_t, std::vector<double>> weight_sums;  // layer -> per-expert sum
    std::map<std::size_t, double> token_counts;

    void record(std::size_t layer, const Tensor& weights, std::size_t experts) {
        auto& sums = weight_sums[layer];
        sums.resize(experts, 0.0);
        std::size_t rows = weights.numel() / experts;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t e = 0; e < experts; ++e) sums[e] += weights.values()[r * experts + e];
        token_counts[layer] += static_cast<double>(rows);
    }

    std::vector<double> mean_weights(std::size_t layer) const {
        std::vector<double> out;
        auto it = weight_sums.find(layer);
        if (it == weight_sums.end()) return out;
        double n = token_counts.at(layer);
        for (double s : it->second) out.push_back(n > 0 ? s / n : 0.0);
        return out;
    }
};

class Gate {
public:
    Gate() = default;
    Gate(std::size_t d, std::size_t experts, std::size_t top_k, Rng& rng)
        : experts_(experts), top_k_(top_k) {
        w_gate_ = init_linear({d, experts}, d, rng);
        w_noise_ = init_linear({d, experts}, d, rng);
    }

    // k-sparse weights on the simplex. Training adds standard-normal noise
    // scaled by Softplus(x . W_n); evaluation is noise-free.
    Tensor forward(const Tensor& x, bool train_mode, Rng* noise_rng) const {
        Tensor logits = matmul(x, w_gate_);
        if (train_mode) {
            if (!noise_rng) throw data_error("gate: training mode requires a noise stream");
            std::vector<double> n(logits.numel());
            for (auto& v : n) v = noise_rng->normal();
            Tensor noise = mul(Tensor::constant(logits.shape(), std::move(n)),
                               softplus(matmul(x, w_noise_)));
            logits = add(logits, noise);
        }
        return softmax(topk_mask(logits, top_k_).values);
    }

    std::size_t experts() const { return experts_; }

    void collect(ParamList& out, const std::string& prefix) const {
        out.push_back({prefix + ".w_gate", w_gate_});
        out.push_back({prefix + ".w_noise", w_noise_});
    }

private:
    std::size_t experts_ = 0, top_k_ = 0;
    Tensor w_gate_, w_noise_;
};

class Expert {
public:
    Expert() = default;
    Expert(std::size_t d, std::size_t hidden, Rng& rng) {
        w1_ = init_linear({d, hidden}, d, rng);
        b1_ = Tensor::zeros({hidden}, true);
        w2_ = init_linear({hidden, d}, hidden, rng);
        b2_ = Tensor::zeros({d}, true);
    }

    Tensor forward(const Tensor& x) const {
        return add(matmul(gelu(add(matmul(x, w1_), b1_)), w2_), b2_);
    }

    void collect(ParamList& out, const std::string& prefix) const {
        out.push_back({prefix + ".w1", w1_});
        out.push_back({prefix + ".b1", b1_});
        out.push_back({prefix + ".w2", w2_});
        out.push_back({prefix + ".b2", b2_});
    }

private:
    Tensor w1_, b1_, w2_, b2_;
};

class MoeLayer {
public:
    MoeLayer() = default;
    MoeLayer(const MoeTransformerConfig& cfg, Rng& rng)
        : gate_(cfg.d, cfg.experts, cfg.top_k, rng) {
        for (std::size_t i = 0; i < cfg.experts; ++i)
            experts_.emplace_back(cfg.d, cfg.hidden(), rng);
    }

    // Weighted sum over the selected experts only; an expert no token
    // selected is never evaluated (its gate column underflows to exact 0).
    Tensor forward(const Tensor& x, bool train_mode, Rng* noise_rng, std::size_t layer = 0,
                   MoeUsage* usage = nullptr) const {
        Tensor weights = gate_.forward(x, train_mode, noise_rng);
        if (usage) usage->record(layer, weights, experts_.size());
        std::size_t E = experts_.size();
        Tensor acc;
        for (std::size_t e = 0; e < E; ++e) {
            bool used = false;
            for (std::size_t r = e; r < weights.numel(); r += E)
                if (weights.values()[r] > 0.0) {
                    used = true;
                    break;
                }
            if (!used) continue;
            Tensor we = slice(weights, weights.shape().size() - 1, e, 1);
            Tensor contrib = mul(experts_[e].forward(x), we);
            acc = acc.defined() ? add(acc, contrib) : contrib;
        }
        if (!acc.defined()) throw numerical_error("moe layer: no expert selected");
        return acc;
    }

    const Gate& gate() const { return gate_; }
    const std::vector<Expert>& experts() const { return experts_; }

    void collect(ParamList& out, const std::string& prefix) const {
        gate_.collect(out, prefix + ".gate");
        for (std::size_t i = 0; i < experts_.size(); ++i)
            experts_[i].collect(out, prefix + ".expert" + std::to_string(i));
    }

private:
    Gate gate_;
    std::vector<Expert> experts_;
};

// Disallows key s for query t unless s <= t and s is a REAL position.
inline BoolArray attention_disallowed(const BoolArray& real_mask) {
    std::size_t B = real_mask.shape[0], T = real_mask.shape[1];
    BoolArray out({B, 1, T, T}, true);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t s = 0; s <= t; ++s)
                if (real_mask.v[b * T + s]) out.v[(b * T + t) * T + s] = 0;
    return out;
}

class MaskedAttention {
public:
    MaskedAttention() = default;
    MaskedAttention(std::size_t d, std::size_t heads, Rng& rng) : d_(d), heads_(heads) {
        w_q_ = init_linear({d, d}, d, rng);
        w_k_ = init_linear({d, d}, d, rng);
        w_v_ = init_linear({d, d}, d, rng);
        w_o_ = init_linear({d, d}, d, rng);
        b_q_ = Tensor::zeros({d}, true);
        b_k_ = Tensor::zeros({d}, true);
        b_v_ = Tensor::zeros({d}, true);
        b_o_ = Tensor::zeros({d}, true);
    }

    Tensor forward(const Tensor& x, const BoolArray& disallowed) const {
        std::size_t B = x.shape()[0], T = x.shape()[1];
        std::size_t dk = d_ / heads_;
        auto split = [&](const Tensor& t) {
            return transpose(reshape(t, {B, T, heads_, dk}), 1, 2);  // B x H x T x dk
        };
        Tensor q = split(add(matmul(x, w_q_), b_q_));
        Tensor k = split(add(matmul(x, w_k_), b_k_));
        Tensor v = split(add(matmul(x, w_v_), b_v_));
        Tensor scores = scale(matmul(q, transpose(k, 2, 3)), 1.0 / std::sqrt((double)dk));
        Tensor attn = softmax(masked_fill(scores, disallowed, kNegInf));
        Tensor ctx = reshape(transpose(matmul(attn, v), 1, 2), {B, T, d_});
        return add(matmul(ctx, w_o_), b_o_);
    }

    void collect(ParamList& out, const std::string& prefix) const {
        out.push_back({prefix + ".w_q", w_q_});
        out.push_back({prefix + ".b_q", b_q_});
        out.push_back({prefix + ".w_k", w_k_});
        out.push_back({prefix + ".b_k", b_k_});
        out.push_back({prefix + ".w_v", w_v_});
        out.push_back({prefix + ".b_v", b_v_});
        out.push_back({prefix + ".w_o", w_o_});
        out.push_back({prefix + ".b_o", b_o_});
    }

private:
    std::size_t d_ = 0, heads_ = 0;
    Tensor w_q_, w_k_, w_v_, w_o_, b_q_, b_k_, b_v_, b_o_;
};

// Pre-norm residual block. The sources are silent on normalization; layer
// norm is an addition required for trainability.
class MoeTransformerBlock {
public:
    MoeTransformerBlock() = default;
    MoeTransformerBlock(const MoeTransformerConfig& cfg, Rng& rng)
        : attn_(cfg.d, cfg.heads, rng), moe_(cfg, rng) {
        ln1_g_ = Tensor::full({cfg.d}, 1.0, true);
        ln1_b_ = Tensor::zeros({cfg.d}, true);
        ln2_g_ = Tensor::full({cfg.d}, 1.0, true);
        ln2_b_ = Tensor::zeros({cfg.d}, true);
    }

    Tensor forward(const Tensor& x, const BoolArray& disallowed, bool train_mode,
                   Rng* noise_rng, std::size_t layer, MoeUsage* usage) const {
        Tensor h = add(x, attn_.forward(layer_norm(x, ln1_g_, ln1_b_), disallowed));
        return add(h, moe_.forward(layer_norm(h, ln2_g_, ln2_b_), train_mode, noise_rng, layer,
                                   usage));
    }

    const MoeLayer& moe() const { return moe_; }

    void collect(ParamList& out, const std::string& prefix) const {
        out.push_back({prefix + ".ln1_g", ln1_g_});
        out.push_back({prefix + ".ln1_b", ln1_b_});
        out.push_back({prefix + ".ln2_g", ln2_g_});
        out.push_back({prefix + ".ln2_b", ln2_b_});
        attn_.collect(out, prefix + ".attn");
        moe_.collect(out, prefix + ".moe");
    }

private:
    MaskedAttention attn_;
    MoeLayer moe_;
    Tensor ln1_g_, ln1_b_, ln2_g_, ln2_b_;
};

class TrajectoryTower {
public:
    TrajectoryTower() = default;
    TrajectoryTower(const MoeTransformerConfig& cfg, Rng rng) : cfg_(cfg) {
        cfg_.validate();
        time_table_ = init_normal({static_cast<std::size_t>(kTimeSlots), cfg.d}, 0.02, rng);
        for (std::size_t i = 0; i < cfg.layers; ++i) blocks_.emplace_back(cfg, rng);
    }

    const MoeTransformerConfig& config() const { return cfg_; }

    // I = Blocks(E_l + E_t)
    Tensor forward(const Tensor& e_l, const IntArray& time_slots, const BoolArray& real_mask,
                   bool train_mode, Rng* noise_rng, MoeUsage* usage = nullptr) const {
        Tensor e_t = embedding_lookup(time_table_, time_slots);
        Tensor x = add(e_l, e_t);
        BoolArray disallowed = attention_disallowed(real_mask);
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            x = blocks_[i].forward(x, disallowed, train_mode, noise_rng, i, usage);
        return x;
    }

    const std::vector<MoeTransformerBlock>& blocks() const { return blocks_; }

    void collect(ParamList& out, const std::string& prefix) const {
        out.push_back({prefix + ".time_table", time_table_});
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].collect(out, prefix + ".block" + std::to_string(i));
    }

private:
    MoeTransformerConfig cfg_;
    Tensor time_table_;
    std::vector<MoeTransformerBlock> blocks_;
};

}  // namespace unimove
