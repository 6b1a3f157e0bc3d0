#pragma once

#include <cmath>
#include <vector>

#include "larc/common.hpp"
#include "larc/config.hpp"
#include "larc/model.hpp"
#include "larc/tensor.hpp"

// Grouped AdamW with a linear warmup/decay schedule and global-norm gradient
// clipping. Two parameter groups: "backbone" (encoder blocks and embeddings,
// small lr) and everything added on top (fusion, heads, sigma-net, pooler;
// larger lr). Weight decay is decoupled and applies to rank-2 tensors only.

namespace larc {

struct GroupLrs {
    double backbone = 0.0;
    double new_group = 0.0;
};

inline void validate(const OptimizerConfig& cfg) {
    if (cfg.lr_backbone <= 0.0 || cfg.lr_new <= 0.0)
        throw ConfigError("learning rates must be positive");
    if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0)
        throw ConfigError("adam betas must lie in [0, 1)");
    if (cfg.adam_eps <= 0.0) throw ConfigError("adam eps must be positive");
    if (cfg.weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
    if (cfg.clip_max_norm <= 0.0) throw ConfigError("clip max norm must be positive");
    if (cfg.accum_steps < 1) throw ConfigError("accum_steps must be at least 1");
    if (cfg.warmup_fraction < 0.0 || cfg.warmup_fraction >= 1.0)
        throw ConfigError("warmup_fraction must lie in [0, 1)");
}

// Number of warmup steps implied by the schedule. Rounded to the nearest
// step and capped at total_steps - 1 so the decay segment is never empty.
inline long long warmup_steps(const OptimizerConfig& cfg) {
    const long long w = std::llround(cfg.warmup_fraction * static_cast<double>(cfg.total_steps));
    return std::min(w, cfg.total_steps - 1);
}

// Piecewise-linear schedule multiplier: 0 -> 1 over the warmup segment, then
// 1 -> 0 over the rest. Continuous, with the peak exactly at the warmup
// boundary.
inline double lr_multiplier_at(long long step, const OptimizerConfig& cfg) {
    validate(cfg);
    if (cfg.total_steps <= 0) throw ConfigError("total_steps must be set before scheduling");
    if (step < 0 || step > cfg.total_steps)
        throw ConfigError("schedule step out of range [0, total_steps]");
    const long long w = warmup_steps(cfg);
    if (step < w) return static_cast<double>(step) / static_cast<double>(w);
    return static_cast<double>(cfg.total_steps - step) / static_cast<double>(cfg.total_steps - w);
}

inline GroupLrs lr_at(long long step, const OptimizerConfig& cfg) {
    const double m = lr_multiplier_at(step, cfg);
    return {cfg.lr_backbone * m, cfg.lr_new * m};
}

// Global L2 norm over every parameter gradient. Parameters whose gradient
// buffer was never touched count as zero.
template <class S>
double global_grad_norm(const std::vector<ParamInfoT<S>>& params) {
    double sq = 0.0;
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        TensorT<S> t = p.tensor;
        const S* g = t.grad().data();
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double v = static_cast<double>(g[i]);
            sq += v * v;
        }
    }
    return std::sqrt(sq);
}

// Scales all gradients so their global norm does not exceed max_norm.
// Returns the scale applied (1.0 when already within bounds).
template <class S>
double clip_global_norm(const std::vector<ParamInfoT<S>>& params, double max_norm) {
    if (max_norm <= 0.0) throw ConfigError("clip max norm must be positive");
    const double norm = global_grad_norm(params);
    if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
    if (norm <= max_norm) return 1.0;
    const double scale = max_norm / norm;
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        TensorT<S> t = p.tensor;
        S* g = t.grad().data();
        for (std::size_t i = 0; i < t.size(); ++i)
            g[i] = static_cast<S>(static_cast<double>(g[i]) * scale);
    }
    return scale;
}

// Multiplies every gradient by s. The trainer uses this to turn a sum over
// accumulation micro-batches into a mean before clipping and stepping.
template <class S>
void scale_grads(const std::vector<ParamInfoT<S>>& params, double s) {
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        TensorT<S> t = p.tensor;
        S* g = t.grad().data();
        for (std::size_t i = 0; i < t.size(); ++i)
            g[i] = static_cast<S>(static_cast<double>(g[i]) * s);
    }
}

template <class S>
void zero_grads(const std::vector<ParamInfoT<S>>& params) {
    for (const auto& p : params) {
        TensorT<S> t = p.tensor;
        t.zero_grad();
    }
}

// Decoupled-weight-decay Adam. Moments are kept per parameter coordinate and
// the arithmetic runs in double regardless of the parameter scalar type, so
// float and double models see the same update up to final rounding.
template <class S>
class AdamWT {
  public:
    AdamWT(std::vector<ParamInfoT<S>> params, OptimizerConfig cfg)
        : params_(std::move(params)), cfg_(std::move(cfg)) {
        validate(cfg_);
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (const auto& p : params_) {
            m_.emplace_back(p.tensor.size(), 0.0);
            v_.emplace_back(p.tensor.size(), 0.0);
        }
    }

    // Applies one update from the gradients currently stored on the
    // parameters (assumed already averaged over the accumulation window and
    // clipped). Gradients are left untouched; the caller zeroes them.
    void step(const GroupLrs& lrs) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            const double lr = p.backbone ? lrs.backbone : lrs.new_group;
            const double wd = p.decay ? cfg_.weight_decay : 0.0;
            TensorT<S> t = p.tensor;
            S* th = t.data();
            const S* g = t.has_grad() ? t.grad().data() : nullptr;
            double* m = m_[i].data();
            double* v = v_[i].data();
            for (std::size_t j = 0; j < t.size(); ++j) {
                const double gj = g ? static_cast<double>(g[j]) : 0.0;
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                const double upd =
                    mhat / (std::sqrt(vhat) + cfg_.adam_eps) + wd * static_cast<double>(th[j]);
                th[j] = static_cast<S>(static_cast<double>(th[j]) - lr * upd);
            }
        }
    }

    long long steps_taken() const { return t_; }
    const std::vector<ParamInfoT<S>>& params() const { return params_; }

    // Moment access for checkpointing: flat per-parameter buffers in
    // registration order.
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }
    void restore_state(long long steps, std::vector<std::vector<double>> m,
                       std::vector<std::vector<double>> v) {
        if (m.size() != params_.size() || v.size() != params_.size())
            throw ConfigError("optimizer state does not match parameter registry");
        for (std::size_t i = 0; i < params_.size(); ++i)
            if (m[i].size() != params_[i].tensor.size() || v[i].size() != params_[i].tensor.size())
                throw ConfigError("optimizer moment size does not match parameter");
        t_ = steps;
        m_ = std::move(m);
        v_ = std::move(v);
    }

  private:
    std::vector<ParamInfoT<S>> params_;
    OptimizerConfig cfg_;
    long long t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

using AdamW = AdamWT<float>;

} // namespace larc
