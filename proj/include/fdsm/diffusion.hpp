#pragma once

#include "fdsm/autodiff.hpp"
#include "fdsm/tensor.hpp"

#include <span>
#include <string>
#include <vector>

namespace fdsm {

enum class BetaSchedule { Linear, Cosine };

BetaSchedule beta_schedule_from_string(const std::string& name);
std::string to_string(BetaSchedule kind);

/// Timesteps are 1-indexed: beta[t - 1] is beta_t.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha_bar;

    double alpha_bar_at(int t) const;
    void check_timestep(int t) const;
};

/// Linear beta from 1e-4 to 0.02 inclusive (or the cosine alpha-bar schedule),
/// with alpha_bar the cumulative product of (1 - beta).
NoiseSchedule make_schedule(int T, BetaSchedule kind = BetaSchedule::Linear);

/// z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps.
Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& schedule);

/// z0_hat = (z_t - sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha_bar_t).
Tensor estimate_z0(const Tensor& z_t, const Tensor& eps_hat, int t, const NoiseSchedule& schedule);

/// Batched forms: leading axis indexes samples, t[b] is the timestep of sample b.
Tensor forward_diffuse_batch(const Tensor& z0, std::span<const int> t, const Tensor& eps,
                             const NoiseSchedule& schedule);
ad::Var estimate_z0(ad::Var z_t, ad::Var eps_hat, std::span<const int> t,
                    const NoiseSchedule& schedule);

} // namespace fdsm
