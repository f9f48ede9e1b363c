#pragma once

// AdamW (decoupled weight decay) with global-norm gradient clipping.

#include <cmath>
#include <vector>

#include "unimove/error.hpp"
#include "unimove/tensor.hpp"

namespace unimove {

struct OptimConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double clip_norm = 1.0;  // <= 0 disables clipping
};

class AdamW {
public:
    AdamW() = default;
    AdamW(std::vector<Tensor> params, OptimConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        for (auto& p : params_) {
            m_.emplace_back(p.numel(), 0.0);
            v_.emplace_back(p.numel(), 0.0);
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    double grad_norm() const {
        double sq = 0.0;
        for (auto& p : params_)
            for (double g : const_cast<Tensor&>(p).grad()) sq += g * g;
        return std::sqrt(sq);
    }

    void step() {
        ++t_;
        double clip_scale = 1.0;
        if (cfg_.clip_norm > 0) {
            double norm = grad_norm();
            if (!std::isfinite(norm)) throw numerical_error("gradient norm is not finite");
            if (norm > cfg_.clip_norm) clip_scale = cfg_.clip_norm / norm;
        }
        double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& vals = params_[i].values();
            auto& grad = params_[i].grad();
            for (std::size_t j = 0; j < vals.size(); ++j) {
                double g = grad[j] * clip_scale;
                m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
                v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
                double mhat = m_[i][j] / bc1;
                double vhat = v_[i][j] / bc2;
                vals[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                      cfg_.weight_decay * vals[j]);
            }
        }
    }

    // Serialized optimizer state: step count then moments per parameter.
    std::int64_t step_count() const { return t_; }
    std::vector<std::vector<double>>& moment1() { return m_; }
    std::vector<std::vector<double>>& moment2() { return v_; }
    void set_step_count(std::int64_t t) { t_ = t; }

private:
    std::vector<Tensor> params_;
    OptimConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace unimove
