#include "fdsm/diffusion.hpp"

#include "fdsm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fdsm {

BetaSchedule beta_schedule_from_string(const std::string& name) {
    if (name == "linear") return BetaSchedule::Linear;
    if (name == "cosine") return BetaSchedule::Cosine;
    throw ConfigError("unknown beta schedule '" + name + "'");
}

std::string to_string(BetaSchedule kind) {
    return kind == BetaSchedule::Linear ? "linear" : "cosine";
}

void NoiseSchedule::check_timestep(int t) const {
    if (t < 1 || t > T) {
        throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, " +
                                std::to_string(T) + "]");
    }
}

double NoiseSchedule::alpha_bar_at(int t) const {
    check_timestep(t);
    return alpha_bar[static_cast<std::size_t>(t - 1)];
}

NoiseSchedule make_schedule(int T, BetaSchedule kind) {
    if (T < 1) throw ConfigError("diffusion needs T >= 1, got " + std::to_string(T));
    NoiseSchedule s;
    s.T = T;
    const auto n = static_cast<std::size_t>(T);
    s.beta.resize(n);
    if (kind == BetaSchedule::Linear) {
        constexpr double lo = 1e-4;
        constexpr double hi = 0.02;
        for (std::size_t i = 0; i < n; ++i) {
            s.beta[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
        }
    } else {
        constexpr double offset = 0.008;
        auto f = [&](double t) {
            const double c = std::cos((t / static_cast<double>(T) + offset) / (1.0 + offset) *
                                      std::numbers::pi / 2.0);
            return c * c;
        };
        for (std::size_t i = 0; i < n; ++i) {
            const double ratio = f(static_cast<double>(i + 1)) / f(static_cast<double>(i));
            s.beta[i] = std::clamp(1.0 - ratio, 1e-8, 0.999);
        }
    }
    s.alpha_bar.resize(n);
    double prod = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        prod *= 1.0 - s.beta[i];
        s.alpha_bar[i] = prod;
    }
    return s;
}

Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& schedule) {
    require_same_shape(z0, eps, "forward_diffuse");
    const double ab = schedule.alpha_bar_at(t);
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    Tensor out(z0.shape());
    for (std::size_t i = 0; i < z0.size(); ++i) out[i] = a * z0[i] + b * eps[i];
    return out;
}

Tensor estimate_z0(const Tensor& z_t, const Tensor& eps_hat, int t, const NoiseSchedule& schedule) {
    require_same_shape(z_t, eps_hat, "estimate_z0");
    const double ab = schedule.alpha_bar_at(t);
    if (!(ab > 0.0)) throw std::domain_error("alpha_bar_t must be positive to recover z0");
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    Tensor out(z_t.shape());
    for (std::size_t i = 0; i < z_t.size(); ++i) out[i] = (z_t[i] - b * eps_hat[i]) / a;
    return out;
}

namespace {

// Per-sample coefficient broadcast over everything after the leading axis.
Tensor per_sample(const Shape& shape, std::span<const int> t, auto coefficient) {
    if (shape.empty() || shape[0] != t.size()) {
        throw ShapeError("batch of " + std::to_string(t.size()) + " timesteps vs tensor " +
                         shape_to_string(shape));
    }
    Tensor out(shape);
    const std::size_t per = out.size() / shape[0];
    for (std::size_t b = 0; b < shape[0]; ++b) {
        const double c = coefficient(t[b]);
        std::fill_n(out.data().begin() + static_cast<std::ptrdiff_t>(b * per), per, c);
    }
    return out;
}

} // namespace

Tensor forward_diffuse_batch(const Tensor& z0, std::span<const int> t, const Tensor& eps,
                             const NoiseSchedule& schedule) {
    require_same_shape(z0, eps, "forward_diffuse");
    const Tensor a = per_sample(z0.shape(), t, [&](int s) { return std::sqrt(schedule.alpha_bar_at(s)); });
    const Tensor b = per_sample(z0.shape(), t, [&](int s) { return std::sqrt(1.0 - schedule.alpha_bar_at(s)); });
    return a * z0 + b * eps;
}

ad::Var estimate_z0(ad::Var z_t, ad::Var eps_hat, std::span<const int> t,
                    const NoiseSchedule& schedule) {
    const Shape& shape = z_t.shape();
    const Tensor inv_a = per_sample(shape, t, [&](int s) {
        const double ab = schedule.alpha_bar_at(s);
        if (!(ab > 0.0)) throw std::domain_error("alpha_bar_t must be positive to recover z0");
        return 1.0 / std::sqrt(ab);
    });
    const Tensor ratio = per_sample(shape, t, [&](int s) {
        const double ab = schedule.alpha_bar_at(s);
        return std::sqrt(1.0 - ab) / std::sqrt(ab);
    });
    return ad::sub(ad::mul_const(z_t, inv_a), ad::mul_const(eps_hat, ratio));
}

} // namespace fdsm
