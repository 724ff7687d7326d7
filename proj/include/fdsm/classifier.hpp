#pragma once

#include "fdsm/conditioning.hpp"
#include "fdsm/denoiser.hpp"
#include "fdsm/diffusion.hpp"
#include "fdsm/synthdata.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace fdsm {

enum class NoiseAggregation {
    MeanDistance,  // average distances over noise draws, then one argmin
    Vote,          // majority vote of per-draw argmins
};

NoiseAggregation noise_aggregation_from_string(const std::string& name);
std::string to_string(NoiseAggregation mode);

struct InferenceConfig {
    int t_test = 25;
    int num_noise_seeds = 10;
    NoiseAggregation aggregation = NoiseAggregation::MeanDistance;

    void validate(int T) const;
};

/// Everything needed to turn a class into a conditioned noise prediction.
struct ZeroShotModel {
    DenoiserConfig config;
    ParameterSet params;
    NoiseSchedule schedule;
    KinematicHead head;
    std::size_t embed_dim = 64;
    std::uint64_t text_seed = 0;
};

/// Sparse label embedding and its predicted intensity.
struct CandidateCondition {
    int class_id = 0;
    Tensor embedding;
    double s_hat = 0.0;
};

CandidateCondition candidate_condition(const ZeroShotModel& model, const ActionClass& cls);

/// ||eps_test - eps_theta(z_t, t_test; d, s)|| with z_t = forward_diffuse(z0, t_test, eps_test).
double score_candidate(const ZeroShotModel& model, const Tensor& z0, const ActionClass& candidate,
                       const Tensor& eps_test, const InferenceConfig& cfg, Rng* gating_rng = nullptr);

struct Classification {
    int predicted = 0;
    /// Mean distance per candidate, keyed by class id.
    std::map<int, double> mean_distance;
};

/// eps draw i comes from child_seed(seed, i). Ties go to the lowest class id.
Classification classify(const ZeroShotModel& model, const Tensor& z0,
                        std::span<const ActionClass> candidates, const InferenceConfig& cfg,
                        std::uint64_t seed);

struct EvalResult {
    double accuracy = 0.0;
    std::size_t correct = 0;
    std::size_t total = 0;
    std::vector<int> class_ids;                  // sorted candidate ids
    std::vector<std::string> labels;             // aligned with class_ids
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
    int t_test = 0;
    int seeds = 0;

    double class_accuracy(std::size_t row) const;
};

nlohmann::json to_json(const EvalResult& r);

/// Sample i is classified with seed child_seed(seed, i).
EvalResult evaluate_accuracy(const ZeroShotModel& model, std::span<const Sample> test_set,
                             std::span<const ActionClass> candidates, const InferenceConfig& cfg,
                             std::uint64_t seed);

} // namespace fdsm
