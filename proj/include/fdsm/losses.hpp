#pragma once

#include "fdsm/autodiff.hpp"
#include "fdsm/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace fdsm {

struct SpectralWeightConfig {
    std::size_t cutoff = 4;
    double gamma = 1.0;
    int T = 50;

    void validate(std::size_t length) const;
};

/// Mean over all elements of (eps_hat - eps)^2.
double diffusion_loss(const Tensor& eps_hat, const Tensor& eps);
ad::Var diffusion_loss(ad::Var eps_hat, ad::Var eps);

/// 1 below the cutoff; gamma (1 - t/T) at and above it.
double spectral_weight(std::size_t k, int t, const SpectralWeightConfig& cfg);
/// W(k, t) for k = 0..length-1.
std::vector<double> spectral_weights(std::size_t length, int t, const SpectralWeightConfig& cfg);

/// sum_k W(k,t) |DCT(z0)_k - DCT(z0_hat)_k|^2 over all channels and joints,
/// divided by the number of elements.
double spectral_loss(const Tensor& z0, const Tensor& z0_hat, int t, const SpectralWeightConfig& cfg);
/// Same reduction with an explicit per-frequency weight vector.
double spectral_loss_weighted(const Tensor& z0, const Tensor& z0_hat, std::span<const double> weights);

/// Batched [B, C, L, V] form with per-sample timesteps; normalized by B*C*L*V.
ad::Var spectral_loss(ad::Var z0, ad::Var z0_hat, std::span<const int> t,
                      const SpectralWeightConfig& cfg);

double total_loss(double l_diff, double l_freq, double lambda_freq);

/// Binary cross-entropy with s_hat clamped to [1e-7, 1 - 1e-7].
double bce_distill_loss(double s_hat, int s_gt);
/// Mean BCE over a batch of probabilities (any shape) against 0/1 targets.
ad::Var bce_distill_loss(ad::Var s_hat, const Tensor& s_gt);

} // namespace fdsm
