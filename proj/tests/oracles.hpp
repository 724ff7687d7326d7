#pragma once

#include "fdsm/harness.hpp"
#include "fdsm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace fdsm::testing {

struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
    std::string worst_name;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Central differences of the full training loss (denoiser, SRM, diffusion and
/// spectral terms) against the tape, on `per_tensor` coordinates of every parameter.
inline GradCheck composite_gradient_check(std::uint64_t seed, std::size_t per_tensor = 6, double h = 1e-4) {
    ExperimentConfig cfg;
    cfg.seed = seed;
    const DenoiserConfig model = cfg.denoiser();
    const NoiseSchedule schedule = make_schedule(cfg.diffusion_steps, cfg.beta_schedule);
    Rng rng(seed);

    ParameterSet params = init_denoiser(model, seed);
    std::vector<std::string> names;
    for (auto& [name, p] : params) {
        names.push_back(name);
        const Tensor jitter = normal_tensor(p.shape(), rng, 0.1);
        for (std::size_t i = 0; i < p.size(); ++i) p[i] += jitter[i];
    }

    const std::size_t B = 2;
    TrainingBatch batch;
    batch.z0 = normal_tensor({B, model.channels, model.length, model.joints}, rng);
    batch.eps = normal_tensor(batch.z0.shape(), rng);
    batch.d = normal_tensor({B, model.text_dim}, rng, 0.125);
    batch.t = {static_cast<int>(1 + seed % 20), static_cast<int>(21 + seed % 29)};
    batch.s_eff = {0.35, 0.9};

    const ad::LossFn loss = [&](ad::Tape& tape, const ad::VarMap& vars) {
        return training_loss(vars, tape, cfg, schedule, batch).total;
    };
    const GradientMap analytic = ad::grad(loss, params);

    GradCheck out;
    for (const auto& name : names) {
        const std::size_t n = params.at(name).size();
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        for (std::size_t k = 0; k < std::min(per_tensor, n); ++k) {
            const std::size_t i = pick(rng);
            ParameterSet shifted = params;
            const double x = params.at(name)[i];
            shifted.at(name)[i] = x + h;
            const double up = ad::evaluate(loss, shifted);
            shifted.at(name)[i] = x - h;
            const double down = ad::evaluate(loss, shifted);
            const double numeric = (up - down) / (2.0 * h);
            const double g = analytic.at(name)[i];
            const double denom = std::max({std::abs(g), std::abs(numeric), 1e-6});
            const double rel = std::abs(g - numeric) / denom;
            if (rel > out.max_rel_error) {
                out.max_rel_error = rel;
                out.worst_name = name + "[" + std::to_string(i) + "]";
                out.worst_analytic = g;
                out.worst_numeric = numeric;
            }
            ++out.coordinates;
        }
    }
    return out;
}

/// Plain logistic regression by full-batch gradient descent; training accuracy.
inline double logistic_oracle_accuracy(const DistillationSet& set, int iterations = 3000, double step = 0.5) {
    const std::size_t n = set.embeddings.dim(0), dim = set.embeddings.dim(1);
    std::vector<double> w(dim, 0.0);
    double b = 0.0;
    const auto logit = [&](std::size_t i) {
        double z = b;
        for (std::size_t j = 0; j < dim; ++j) z += w[j] * set.embeddings.at(i, j);
        return z;
    };
    for (int it = 0; it < iterations; ++it) {
        std::vector<double> gw(dim, 0.0);
        double gb = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double err = 1.0 / (1.0 + std::exp(-logit(i))) - set.labels.at(i, 0);
            for (std::size_t j = 0; j < dim; ++j) gw[j] += err * set.embeddings.at(i, j);
            gb += err;
        }
        for (std::size_t j = 0; j < dim; ++j) w[j] -= step * gw[j] / static_cast<double>(n);
        b -= step * gb / static_cast<double>(n);
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) correct += (logit(i) > 0.0) == (set.labels.at(i, 0) > 0.5);
    return static_cast<double>(correct) / static_cast<double>(n);
}

} // namespace fdsm::testing
