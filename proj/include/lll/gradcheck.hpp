#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>

#include "lll/tensor.hpp"

namespace lll {

/// Central-difference gradient oracle. `loss_fn` evaluates the scalar loss at
/// the current parameter values; `params` must already hold the analytic
/// gradients to compare against (run backward first). Perturbs every
/// coordinate by +/-h and returns the maximum per-coordinate
/// |fd - grad| / max(|fd|, |grad|, 1).
inline double check_gradients(const std::function<double()>& loss_fn,
                              std::span<Tensor* const> params, double h) {
    if (h <= 0) throw std::invalid_argument("check_gradients: h must be positive");
    double worst = 0.0;
    for (Tensor* p : params) {
        if (p->grad.size() != p->data.size())
            throw std::invalid_argument("check_gradients: parameter has no gradient to compare");
        for (size_t i = 0; i < p->data.size(); ++i) {
            const double saved = p->data[i];
            p->data[i] = saved + h;
            const double f_plus = loss_fn();
            p->data[i] = saved - h;
            const double f_minus = loss_fn();
            p->data[i] = saved;
            if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
                throw std::runtime_error("check_gradients: non-finite loss evaluation");
            const double fd = (f_plus - f_minus) / (2.0 * h);
            const double g = p->grad[i];
            const double rel = std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), 1.0});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace lll
