#pragma once

#include "fdsm/tensor.hpp"

#include <json.hpp>

#include <cstddef>
#include <vector>

namespace fdsm {

/// Per-frequency gain G_k: zero below the cutoff, the intensity score above it.
struct GainFilter {
    std::size_t length = 0;
    std::size_t cutoff = 0;
    std::vector<double> gain;
    double alpha = 1.0;

    /// 1 + alpha * G_k for every k.
    std::vector<double> multipliers() const;
};

struct BandEnergyReport {
    std::size_t cutoff = 0;
    double low = 0.0;
    double high = 0.0;
    /// Energy per frequency index, summed over every other axis.
    std::vector<double> per_k;
    /// k / L for each entry of per_k.
    std::vector<double> normalized_frequency;
};

void to_json(nlohmann::json& j, const BandEnergyReport& r);

/// Index of the temporal axis: rank - 2 for [C, L, V] and [B, C, L, V].
std::size_t temporal_axis(const Tensor& z);

Tensor dct_temporal(const Tensor& z);
Tensor idct_temporal(const Tensor& spectrum);

/// Cutoff index M = L / divisor, never below 1.
std::size_t cutoff_from_divisor(std::size_t length, std::size_t divisor);

GainFilter build_gain(std::size_t length, std::size_t cutoff, double s_hat, double alpha = 1.0);

/// IDCT(DCT(z) * (1 + alpha G)) along the temporal axis, one gain for all channels and joints.
/// Exactly the identity when every multiplier is 1.
Tensor apply_spectral_residual(const Tensor& z, const GainFilter& gain);

BandEnergyReport band_energy(const Tensor& z, std::size_t cutoff);

} // namespace fdsm
