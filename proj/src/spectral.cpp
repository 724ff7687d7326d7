#include "fdsm/spectral.hpp"

#include "fdsm/dct_kernel.hpp"
#include "fdsm/errors.hpp"


#include <algorithm>

namespace fdsm {

std::vector<double> GainFilter::multipliers() const {
    std::vector<double> m(gain.size());
    std::transform(gain.begin(), gain.end(), m.begin(), [this](double g) { return 1.0 + alpha * g; });
    return m;
}

void to_json(nlohmann::json& j, const BandEnergyReport& r) {
    j = nlohmann::json{{"cutoff", r.cutoff},
                       {"low", r.low},
                       {"high", r.high},
                       {"per_k", r.per_k},
                       {"normalized_frequency", r.normalized_frequency}};
}

std::size_t temporal_axis(const Tensor& z) {
    if (z.rank() < 2) {
        throw ShapeError("latent sequence needs rank >= 2, got " + shape_to_string(z.shape()));
    }
    return z.rank() - 2;
}

Tensor dct_temporal(const Tensor& z) {
    return dct_along(z, temporal_axis(z));
}

Tensor idct_temporal(const Tensor& spectrum) {
    return idct_along(spectrum, temporal_axis(spectrum));
}

std::size_t cutoff_from_divisor(std::size_t length, std::size_t divisor) {
    if (divisor == 0) throw ConfigError("cutoff divisor must be positive");
    return std::max<std::size_t>(1, length / divisor);
}

GainFilter build_gain(std::size_t length, std::size_t cutoff, double s_hat, double alpha) {
    if (cutoff == 0 || cutoff > length) {
        throw ConfigError("cutoff M=" + std::to_string(cutoff) + " outside (0, " +
                          std::to_string(length) + "]");
    }
    if (!(s_hat >= 0.0 && s_hat <= 1.0)) throw ConfigError("intensity score must lie in [0, 1]");
    GainFilter g;
    g.length = length;
    g.cutoff = cutoff;
    g.alpha = alpha;
    g.gain.assign(length, 0.0);
    std::fill(g.gain.begin() + static_cast<std::ptrdiff_t>(cutoff), g.gain.end(), s_hat);
    return g;
}

Tensor apply_spectral_residual(const Tensor& z, const GainFilter& gain) {
    const std::size_t axis = temporal_axis(z);
    if (gain.length != z.dim(axis) || gain.gain.size() != gain.length) {
        throw ShapeError("gain filter length " + std::to_string(gain.length) +
                         " does not match temporal length " + std::to_string(z.dim(axis)));
    }
    return spectral_scale_along(z, axis, Tensor({1, gain.length}, gain.multipliers()));
}

BandEnergyReport band_energy(const Tensor& z, std::size_t cutoff) {
    const std::size_t axis = temporal_axis(z);
    const std::size_t L = z.dim(axis);
    if (cutoff == 0 || cutoff > L) {
        throw ConfigError("cutoff M=" + std::to_string(cutoff) + " outside (0, " +
                          std::to_string(L) + "]");
    }
    const Tensor spectrum = dct_temporal(z);
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < z.rank(); ++i) inner *= z.dim(i);

    BandEnergyReport r;
    r.cutoff = cutoff;
    r.per_k.assign(L, 0.0);
    for (std::size_t i = 0; i < spectrum.size(); ++i) {
        const double v = spectrum[i];
        r.per_k[(i / inner) % L] += v * v;
    }
    for (std::size_t k = 0; k < L; ++k) {
        (k < cutoff ? r.low : r.high) += r.per_k[k];
        r.normalized_frequency.push_back(static_cast<double>(k) / static_cast<double>(L));
    }
    return r;
}

} // namespace fdsm
