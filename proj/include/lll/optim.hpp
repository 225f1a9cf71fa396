#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "lll/tensor.hpp"

namespace lll {

struct AdamConfig {
    double lr_max = 6.25e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1.0e-4;
    double weight_decay = 0.01;
    double warmup_ratio = 0.005;
    long total_steps = 1;
    double max_grad_norm = 1.0;
};

/// Linear warmup from 0 to lr_max over warmup_ratio * total_steps, then
/// linear decay to 0 at total_steps.
inline double lr_at(const AdamConfig& cfg, long step) {
    if (cfg.total_steps <= 0) throw std::invalid_argument("lr_at: total_steps must be positive");
    const double warmup = cfg.warmup_ratio * static_cast<double>(cfg.total_steps);
    const double s = static_cast<double>(step);
    if (warmup > 0.0 && s < warmup) return cfg.lr_max * s / warmup;
    const double span = static_cast<double>(cfg.total_steps) - warmup;
    if (span <= 0.0) return 0.0;
    const double lr = cfg.lr_max * (static_cast<double>(cfg.total_steps) - s) / span;
    return std::max(0.0, lr);
}

/// Scales all gradients so their global L2 norm does not exceed max_norm.
/// Returns the scale applied (1 when already within the bound or all-zero).
inline double clip_global_norm(std::span<Tensor* const> params, double max_norm) {
    if (max_norm <= 0) throw std::invalid_argument("clip_global_norm: max_norm must be positive");
    double sq = 0.0;
    for (Tensor* p : params)
        for (double g : p->grad) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return 1.0;
    const double scale = max_norm / norm;
    for (Tensor* p : params)
        for (double& g : p->grad) g *= scale;
    return scale;
}

struct AdamState {
    AdamConfig cfg;
    long step = 0;
    std::vector<std::vector<double>> m, v;

    explicit AdamState(AdamConfig c, std::span<Tensor* const> params) : cfg(c) {
        m.reserve(params.size());
        v.reserve(params.size());
        for (Tensor* p : params) {
            m.emplace_back(p->data.size(), 0.0);
            v.emplace_back(p->data.size(), 0.0);
        }
    }
};

/// One Adam update with bias correction and decoupled weight decay, at the
/// learning rate given by the warmup-linear schedule for the current step.
inline void adam_step(AdamState& state, std::span<Tensor* const> params) {
    const AdamConfig& cfg = state.cfg;
    if (state.step >= cfg.total_steps)
        throw std::invalid_argument("adam_step: schedule exhausted (step >= total_steps)");
    if (params.size() != state.m.size())
        throw std::invalid_argument(detail::str("adam_step: ", params.size(), " params vs state for ",
                                                state.m.size()));
    const double lr = lr_at(cfg, state.step);
    const long t = state.step + 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor* p = params[pi];
        if (p->grad.size() != p->data.size())
            throw std::invalid_argument(detail::str("adam_step: gradient length ", p->grad.size(),
                                                    " vs parameter length ", p->data.size()));
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        for (size_t i = 0; i < p->data.size(); ++i) {
            const double g = p->grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            const double prev = p->data[i];
            p->data[i] = prev - lr * mhat / (std::sqrt(vhat) + cfg.epsilon)
                       - lr * cfg.weight_decay * prev;
        }
        check_finite(p->data, "parameter after adam step");
    }
    state.step += 1;
}

}  // namespace lll
