#include "fdsm/losses.hpp"

#include "fdsm/dct_kernel.hpp"
#include "fdsm/errors.hpp"
#include "fdsm/spectral.hpp"

#include <algorithm>
#include <cmath>

namespace fdsm {

namespace {

constexpr double kProbClamp = 1e-7;

} // namespace

void SpectralWeightConfig::validate(std::size_t length) const {
    if (gamma < 0.0) throw ConfigError("detail weight gamma must be non-negative");
    if (cutoff == 0 || cutoff > length) {
        throw ConfigError("cutoff M=" + std::to_string(cutoff) + " outside (0, " +
                          std::to_string(length) + "]");
    }
    if (T < 1) throw ConfigError("T must be >= 1");
}

double diffusion_loss(const Tensor& eps_hat, const Tensor& eps) {
    require_same_shape(eps_hat, eps, "diffusion_loss");
    double s = 0.0;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const double d = eps_hat[i] - eps[i];
        s += d * d;
    }
    return s / static_cast<double>(eps.size());
}

ad::Var diffusion_loss(ad::Var eps_hat, ad::Var eps) {
    require_same_shape(eps_hat.value(), eps.value(), "diffusion_loss");
    return ad::mean(ad::square(ad::sub(eps_hat, eps)));
}

double spectral_weight(std::size_t k, int t, const SpectralWeightConfig& cfg) {
    if (t < 1 || t > cfg.T) throw std::out_of_range("timestep outside [1, T]");
    if (k < cfg.cutoff) return 1.0;
    return cfg.gamma * (1.0 - static_cast<double>(t) / static_cast<double>(cfg.T));
}

std::vector<double> spectral_weights(std::size_t length, int t, const SpectralWeightConfig& cfg) {
    std::vector<double> w(length);
    for (std::size_t k = 0; k < length; ++k) w[k] = spectral_weight(k, t, cfg);
    return w;
}

double spectral_loss_weighted(const Tensor& z0, const Tensor& z0_hat, std::span<const double> weights) {
    require_same_shape(z0, z0_hat, "spectral_loss");
    const std::size_t axis = temporal_axis(z0);
    const std::size_t L = z0.dim(axis);
    if (weights.size() != L) throw ShapeError("spectral weights length does not match L");
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < z0.rank(); ++i) inner *= z0.dim(i);
    const Tensor diff = dct_along(z0 - z0_hat, axis);
    double s = 0.0;
    for (std::size_t i = 0; i < diff.size(); ++i) s += weights[(i / inner) % L] * diff[i] * diff[i];
    return s / static_cast<double>(z0.size());
}

double spectral_loss(const Tensor& z0, const Tensor& z0_hat, int t, const SpectralWeightConfig& cfg) {
    const std::size_t L = z0.dim(temporal_axis(z0));
    cfg.validate(L);
    if (t < 1 || t > cfg.T) throw std::out_of_range("timestep outside [1, T]");
    return spectral_loss_weighted(z0, z0_hat, spectral_weights(L, t, cfg));
}

ad::Var spectral_loss(ad::Var z0, ad::Var z0_hat, std::span<const int> t,
                      const SpectralWeightConfig& cfg) {
    const Shape& shape = z0.shape();
    require_same_shape(z0.value(), z0_hat.value(), "spectral_loss");
    if (shape.size() != 4 || shape[0] != t.size()) {
        throw ShapeError("batched spectral_loss expects [B, C, L, V] with B timesteps");
    }
    const std::size_t C = shape[1], L = shape[2], V = shape[3];
    cfg.validate(L);
    Tensor w(shape);
    for (std::size_t b = 0; b < shape[0]; ++b) {
        if (t[b] < 1 || t[b] > cfg.T) throw std::out_of_range("timestep outside [1, T]");
        const auto wk = spectral_weights(L, t[b], cfg);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t k = 0; k < L; ++k)
                for (std::size_t v = 0; v < V; ++v) w[((b * C + c) * L + k) * V + v] = wk[k];
    }
    const ad::Var spec = ad::dct(ad::sub(z0, z0_hat), 2);
    return ad::mean(ad::mul_const(ad::square(spec), w));
}

double total_loss(double l_diff, double l_freq, double lambda_freq) {
    return l_diff + lambda_freq * l_freq;
}

double bce_distill_loss(double s_hat, int s_gt) {
    const double p = std::clamp(s_hat, kProbClamp, 1.0 - kProbClamp);
    const double y = static_cast<double>(s_gt);
    return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

ad::Var bce_distill_loss(ad::Var s_hat, const Tensor& s_gt) {
    require_same_shape(s_hat.value(), s_gt, "bce_distill_loss");
    // Recorded as a single primitive; the gradient is zero where the clamp is active.
    const Tensor& p = s_hat.value();
    Tensor value(p.shape());
    Tensor dvalue(p.shape());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
        const double y = s_gt[i];
        value[i] = -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
        const bool clamped = p[i] != q;
        dvalue[i] = clamped ? 0.0 : -(y / q) + (1.0 - y) / (1.0 - q);
    }
    const double n = static_cast<double>(p.size());
    return s_hat.tape().record("bce", Tensor::scalar(sum(value) / n), {s_hat},
                               [s_hat, dvalue, n](ad::Tape& tape, const Tensor& g) {
                                   tape.accumulate(s_hat, (g.item() / n) * dvalue);
                               });
}

} // namespace fdsm
