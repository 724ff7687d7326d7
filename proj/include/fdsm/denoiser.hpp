#pragma once

#include "fdsm/autodiff.hpp"
#include "fdsm/rng.hpp"
#include "fdsm/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fdsm {

/// How the SG-SRM high-band gain is chosen per sample.
enum class GatingMode {
    Predicted,  // intensity head output
    None,       // s = 0, module reduces to the identity
    Uniform,    // s = 1
    Random,     // s ~ U[0, 1], redrawn every forward pass
};

GatingMode gating_mode_from_string(const std::string& name);
std::string to_string(GatingMode mode);

struct DenoiserConfig {
    std::size_t depth = 2;
    std::size_t model_dim = 32;
    std::size_t heads = 1;
    std::size_t mlp_ratio = 2;
    std::size_t channels = 8;
    std::size_t length = 16;
    std::size_t joints = 5;
    std::size_t text_dim = 64;
    std::size_t cutoff_div = 4;
    double alpha = 1.0;
    GatingMode gating = GatingMode::Predicted;
    /// false removes the spectral residual module (every gain forced to zero).
    bool use_srm = true;

    void validate() const;
    std::size_t token_features() const { return channels * joints; }
};

/// Interleaved [sin(t w_0), cos(t w_0), sin(t w_1), ...] with w_i = 10000^(-2i/dim).
Tensor timestep_embedding(double t, std::size_t dim);

/// Parameter names and shapes in registration order.
std::vector<std::pair<std::string, Shape>> denoiser_layout(const DenoiserConfig& config);

/// Weights ~ N(0, 0.02), biases 0, output projection 0.
ParameterSet init_denoiser(const DenoiserConfig& config, std::uint64_t seed);

/// Checks that `params` carries every tensor of `config` with the declared shape.
void check_denoiser_params(const ParameterSet& params, const DenoiserConfig& config);

/// Effective intensity per sample after applying the gating mode (and the SRM toggle).
std::vector<double> resolve_gating(const DenoiserConfig& config, std::span<const double> s_hat,
                                   Rng* gating_rng);

struct DenoiseTrace {
    std::size_t srm_applications = 0;
};

/// Batched noise prediction on a tape. z_t [B, C, L, V], d [B, text_dim],
/// one timestep and one effective intensity per sample. Any L >= 1 works;
/// the cutoff is L / cutoff_div.
ad::Var denoise_forward(const ad::VarMap& params, const DenoiserConfig& config, ad::Var z_t,
                        std::span<const int> t, ad::Var d, std::span<const double> s_eff,
                        DenoiseTrace* trace = nullptr);

/// Value-only evaluation for a batch. `s_hat` is the predicted intensity per
/// sample; the gating mode decides what actually reaches the SRM.
Tensor denoise_batch(const ParameterSet& params, const DenoiserConfig& config, const Tensor& z_t,
                     std::span<const int> t, const Tensor& d, std::span<const double> s_hat,
                     Rng* gating_rng = nullptr);

/// Single latent [C, L, V] with embedding d [text_dim].
Tensor denoise(const ParameterSet& params, const DenoiserConfig& config, const Tensor& z_t, int t,
               const Tensor& d, double s_hat, Rng* gating_rng = nullptr);

} // namespace fdsm
