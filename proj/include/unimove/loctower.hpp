#pragma once

// Location Tower: feature-based location encoder (POI / coordinates /
// popularity rank blocks) and the Deep & Cross net producing candidate
// embeddings for all locations of a city. No per-city parameters anywhere.

#include <string>
#include <vector>

#include "unimove/data.hpp"
#include "unimove/geo.hpp"
#include "unimove/rng.hpp"
#include "unimove/tensor.hpp"

namespace unimove {

using ParamList = std::vector<std::pair<std::string, Tensor>>;

inline Tensor init_linear(Shape shape, std::size_t fan_in, Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> vals(numel(shape));
    for (auto& v : vals) v = rng.uniform(-bound, bound);
    return Tensor::param(std::move(shape), std::move(vals));
}

inline Tensor init_normal(Shape shape, double stddev, Rng& rng) {
    std::vector<double> vals(numel(shape));
    for (auto& v : vals) v = rng.normal(0.0, stddev);
    return Tensor::param(std::move(shape), std::move(vals));
}

// E_l = concat(E_p, E_g, E_r) with block widths d/2, d/4, d/4. EOS and PAD
// positions receive reserved learnable rows instead of feature projections.
class LocationEncoder {
public:
    LocationEncoder() = default;

    LocationEncoder(std::size_t d, Rng rng) : d_(d) {
        if (d % 4 != 0) throw data_error("embedding dimension must be divisible by 4");
        w_poi_ = init_linear({kPoiVectorLen, d / 2}, kPoiVectorLen, rng);
        b_poi_ = Tensor::zeros({d / 2}, true);
        w_geo_ = init_linear({2, d / 4}, 2, rng);
        b_geo_ = Tensor::zeros({d / 4}, true);
        rank_table_ = init_normal({static_cast<std::size_t>(kPopularityRanks), d / 4}, 0.02, rng);
        special_rows_ = init_normal({2, d_}, 0.02, rng);  // row 0 = PAD, row 1 = EOS
    }

    std::size_t dim() const { return d_; }

    // features laid out as flat rows: poi N x 28, geo N x 2, rank N.
    Tensor encode_rows(const std::vector<double>& poi, const std::vector<double>& geo,
                       const std::vector<int>& rank) const {
        std::size_t n = rank.size();
        Tensor p = Tensor::constant({n, kPoiVectorLen}, poi);
        Tensor g = Tensor::constant({n, 2}, geo);
        IntArray r({n});
        for (std::size_t i = 0; i < n; ++i) r.v[i] = rank[i];
        Tensor ep = add(matmul(p, w_poi_), b_poi_);
        Tensor eg = add(matmul(g, w_geo_), b_geo_);
        Tensor er = embedding_lookup(rank_table_, r);
        return concat({ep, eg, er}, 1);
    }

    Tensor encode_city(const CityFeatures& f) const {
        return encode_rows(f.poi, f.geo, f.rank);
    }

    // Batch positions flagged EOS/PAD take the reserved rows; their feature
    // values are ignored via the blend mask.
    Tensor encode_batch(const PaddedBatch& batch, const CityFeatures& f) const {
        std::size_t B = batch.batch, T = batch.capacity, n = B * T;
        std::vector<double> poi(n * kPoiVectorLen, 0.0), geo(n * 2, 0.0);
        std::vector<int> rank(n, 0);
        IntArray special({B, T, 1});
        std::vector<double> blend(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            auto kind = static_cast<TokenKind>(batch.token_kind.v[i]);
            if (kind == TokenKind::Real) {
                auto loc = static_cast<std::size_t>(batch.location_ids.v[i]);
                std::copy(f.poi.begin() + loc * kPoiVectorLen,
                          f.poi.begin() + (loc + 1) * kPoiVectorLen,
                          poi.begin() + i * kPoiVectorLen);
                geo[i * 2] = f.geo[loc * 2];
                geo[i * 2 + 1] = f.geo[loc * 2 + 1];
                rank[i] = f.rank[loc];
                blend[i] = 1.0;
            } else {
                special.v[i] = kind == TokenKind::Eos ? 1 : 0;
            }
        }
        Tensor real = reshape(encode_rows(poi, geo, rank), {B, T, d_});
        Tensor sp = reshape(embedding_lookup(special_rows_, special), {B, T, d_});
        Tensor m = Tensor::constant({B, T, 1}, blend);
        Tensor inv = Tensor::constant({B, T, 1}, blend);
        for (auto& v : inv.values()) v = 1.0 - v;
        return add(mul(real, m), mul(sp, inv));
    }

    void collect(ParamList& out, const std::string& prefix) const {
        out.push_back({prefix + ".w_poi", w_poi_});
        out.push_back({prefix + ".b_poi", b_poi_});
        out.push_back({prefix + ".w_geo", w_geo_});
        out.push_back({prefix + ".b_geo", b_geo_});
        out.push_back({prefix + ".rank_table", rank_table_});
        out.push_back({prefix + ".special_rows", special_rows_});
    }

private:
    std::size_t d_ = 0;
    Tensor w_poi_, b_poi_, w_geo_, b_geo_, rank_table_, special_rows_;
};

// Standard cross form x' = x0 * (x . w) + b + x, stacked with x0 fixed to
// the stack input. The printed per-dimension weight-matrix sum is replaced
// by this canonical parameterization.
class CrossLayer {
public:
    CrossLayer() = default;
    CrossLayer(std::size_t d, Rng& rng) {
        w_ = init_linear({d, 1}, d, rng);
        b_ = Tensor::zeros({d}, true);
    }

    Tensor forward(const Tensor& x0, const Tensor& x) const {
        Tensor s = matmul(x, w_);  // ... x 1, scalar per row
        return add(add(mul(x0, s), b_), x);
    }

    void collect(ParamList& out, const std::string& prefix) const {
        out.push_back({prefix + ".w", w_});
        out.push_back({prefix + ".b", b_});
    }

private:
    Tensor w_, b_;
};

class Dcn {
public:
    Dcn() = default;

    Dcn(std::size_t d, std::size_t hidden, std::size_t cross_layers, Rng rng) {
        for (std::size_t i = 0; i < cross_layers; ++i)
            cross_.emplace_back(d, rng);
        w1_ = init_linear({d, hidden}, d, rng);
        b1_ = Tensor::zeros({hidden}, true);
        w2_ = init_linear({hidden, d}, hidden, rng);
        b2_ = Tensor::zeros({d}, true);
        // Concat of cross and deep outputs is 2d wide; a learned projection
        // restores the stated d-dimensional output contract.
        w_out_ = init_linear({2 * d, d}, 2 * d, rng);
        b_out_ = Tensor::zeros({d}, true);
    }

    Tensor deep_branch(const Tensor& e) const {
        return add(matmul(gelu(add(matmul(e, w1_), b1_)), w2_), b2_);
    }

    Tensor cross_branch(const Tensor& e) const {
        Tensor x = e;
        for (const auto& layer : cross_) x = layer.forward(e, x);
        return x;
    }

    Tensor forward(const Tensor& e) const {
        Tensor both = concat({cross_branch(e), deep_branch(e)}, e.shape().size() - 1);
        return add(matmul(both, w_out_), b_out_);
    }

    void collect(ParamList& out, const std::string& prefix) const {
        for (std::size_t i = 0; i < cross_.size(); ++i)
            cross_[i].collect(out, prefix + ".cross" + std::to_string(i));
        out.push_back({prefix + ".w1", w1_});
        out.push_back({prefix + ".b1", b1_});
        out.push_back({prefix + ".w2", w2_});
        out.push_back({prefix + ".b2", b2_});
        out.push_back({prefix + ".w_out", w_out_});
        out.push_back({prefix + ".b_out", b_out_});
    }

private:
    std::vector<CrossLayer> cross_;
    Tensor w1_, b1_, w2_, b2_, w_out_, b_out_;
};

}  // namespace unimove
