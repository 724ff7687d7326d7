#include "fdsm/optim.hpp"

#include "fdsm/errors.hpp"

#include <cmath>
#include <numbers>

namespace fdsm {

OptimizerState OptimizerState::for_params(const ParameterSet& params, AdamWHyper hyper) {
    OptimizerState state;
    state.hyper = hyper;
    state.first_moment = params.zeros_like();
    state.second_moment = params.zeros_like();
    return state;
}

AdamWResult adamw_step(const ParameterSet& params, const GradientMap& grads,
                       const OptimizerState& state) {
    AdamWResult out{params, state};
    OptimizerState& s = out.state;
    const AdamWHyper& h = s.hyper;
    ++s.step;
    const double step = static_cast<double>(s.step);
    const double bc1 = 1.0 - std::pow(h.beta1, step);
    const double bc2 = 1.0 - std::pow(h.beta2, step);

    for (auto& [name, p] : out.params) {
        if (!grads.contains(name)) throw ShapeError("adamw: missing gradient for '" + name + "'");
        const Tensor& g = grads.at(name);
        if (!s.first_moment.contains(name)) {
            s.first_moment.add(name, Tensor(p.shape()));
            s.second_moment.add(name, Tensor(p.shape()));
        }
        Tensor& m = s.first_moment.at(name);
        Tensor& v = s.second_moment.at(name);
        if (g.shape() != p.shape() || m.shape() != p.shape()) {
            throw ShapeError("adamw: shape mismatch for parameter '" + name + "': param " +
                             shape_to_string(p.shape()) + ", grad " + shape_to_string(g.shape()) +
                             ", moment " + shape_to_string(m.shape()));
        }
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
            v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
            p[i] -= h.learning_rate * h.weight_decay * p[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p[i] -= h.learning_rate * m_hat / (std::sqrt(v_hat) + h.epsilon);
        }
    }
    return out;
}

double cosine_lr(std::int64_t step, std::int64_t total, double base_lr, std::int64_t warmup) {
    if (warmup < 0) throw ConfigError("warm-up steps must be non-negative");
    if (total <= warmup) {
        throw ConfigError("cosine schedule needs total (" + std::to_string(total) +
                          ") > warm-up (" + std::to_string(warmup) + ")");
    }
    if (step < 0 || step > total) throw ConfigError("learning-rate step out of range");
    if (step < warmup) return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
    const double progress =
        static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

} // namespace fdsm
