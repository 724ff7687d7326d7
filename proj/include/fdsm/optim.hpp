#pragma once

#include "fdsm/tensor.hpp"

#include <cstdint>

namespace fdsm {

struct AdamWHyper {
    double learning_rate = 1e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct OptimizerState {
    AdamWHyper hyper;
    ParameterSet first_moment;
    ParameterSet second_moment;
    std::int64_t step = 0;

    /// Zero moments shaped like `params`.
    static OptimizerState for_params(const ParameterSet& params, AdamWHyper hyper = {});
};

struct AdamWResult {
    ParameterSet params;
    OptimizerState state;
};

/// One AdamW update with decoupled weight decay:
///   p <- p - lr * wd * p, then p <- p - lr * m_hat / (sqrt(v_hat) + eps).
/// Uses state.hyper.learning_rate as lr.
AdamWResult adamw_step(const ParameterSet& params, const GradientMap& grads,
                       const OptimizerState& state);

/// Linear warm-up to base_lr over `warmup` steps followed by cosine decay to 0 at `total`.
double cosine_lr(std::int64_t step, std::int64_t total, double base_lr, std::int64_t warmup);

} // namespace fdsm
