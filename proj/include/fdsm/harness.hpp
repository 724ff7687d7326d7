#pragma once

#include "fdsm/autodiff.hpp"
#include "fdsm/classifier.hpp"
#include "fdsm/conditioning.hpp"
#include "fdsm/denoiser.hpp"
#include "fdsm/diffusion.hpp"
#include "fdsm/losses.hpp"
#include "fdsm/spectral.hpp"
#include "fdsm/synthdata.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace fdsm {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct DataSpec {
    SynthSpec synth;
    std::size_t train_per_class = 32;
    std::size_t test_per_class = 20;
};

struct TrainSpec {
    std::int64_t iterations = 20000;
    std::size_t batch_size = 64;
    double learning_rate = 1e-4;
    double weight_decay = 0.01;
    std::int64_t warmup = 100;
    double lambda_freq = 1.0;
    double gamma = 1.0;
    bool fixed_noise = false;
    bool srm = true;
    bool freq_loss = true;
    bool curriculum = true;
    /// Writes elapsed seconds into the metrics; off makes the CSV reproducible bitwise.
    bool log_wall_clock = true;
};

struct EvalSpec {
    std::vector<std::size_t> crop_lengths;
    std::vector<std::size_t> downsample_factors;
    std::vector<int> t_test_sweep;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    DataSpec data;
    DenoiserConfig model;
    HeadTrainingOptions head;  // text/init seeds are derived from `seed`
    int diffusion_steps = 50;
    BetaSchedule beta_schedule = BetaSchedule::Linear;
    TrainSpec train;
    CurriculumSchedule curriculum;  // total is taken from train.iterations
    InferenceConfig inference;
    EvalSpec eval;

    void validate() const;
    /// Denoiser config with the latent dims of the data spec and the SRM toggle applied.
    DenoiserConfig denoiser() const;
    SpectralWeightConfig spectral_weights() const;
    CurriculumSchedule curriculum_schedule() const;
    std::uint64_t text_seed() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Starts from the defaults and overwrites every key present in `j`; unknown keys throw.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Sets a dotted key ("train.iterations") from its text form, parsed with the
/// type of the current value. Throws ConfigError for unknown keys.
void apply_override(nlohmann::json& cfg, const std::string& dotted_key, const std::string& value);
/// Every dotted leaf key of a config document.
std::vector<std::string> config_keys(const nlohmann::json& cfg);
/// FDSM_SEED replaces the master seed when set.
void apply_env_overrides(ExperimentConfig& cfg);

/// Hex FNV-1a of the canonical JSON dump.
std::string config_fingerprint(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    nlohmann::json metadata;
    ParameterSet arrays;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes);

// ---------------------------------------------------------------------------
// Experiment stages
// ---------------------------------------------------------------------------

struct ExperimentData {
    std::vector<SynthClass> classes;
    std::vector<Sample> train;
    std::vector<Sample> test;  // unseen classes only

    std::vector<ActionClass> all_classes() const;
    std::vector<ActionClass> unseen_classes() const;
};

ExperimentData prepare_data(const ExperimentConfig& cfg);

HeadTrainingResult distill(const ExperimentConfig& cfg, const ExperimentData& data);

struct MetricsRecord {
    std::int64_t iteration = 0;
    double l_diff = 0.0;
    double l_freq = 0.0;
    double l_total = 0.0;
    double lr = 0.0;
    double gamma = 0.0;
    double seconds = 0.0;
};

inline constexpr const char* kMetricsHeader = "iteration,l_diff,l_freq,l_total,lr,gamma,seconds";
std::string format_metrics_row(const MetricsRecord& r);

struct TrainingBatch {
    Tensor z0;   // [B, C, L, V]
    Tensor eps;  // [B, C, L, V]
    Tensor d;    // [B, text_dim]
    std::vector<int> t;
    std::vector<double> s_eff;
};

struct LossTerms {
    ad::Var total;
    ad::Var l_diff;
    std::optional<ad::Var> l_freq;
};

/// L_diff + lambda L_freq (the spectral term only when freq_loss is on).
LossTerms training_loss(const ad::VarMap& params, ad::Tape& tape, const ExperimentConfig& cfg,
                        const NoiseSchedule& schedule, const TrainingBatch& batch);

struct TrainedModel {
    ParameterSet params;
    std::optional<Tensor> fixed_eps;
    std::vector<MetricsRecord> metrics;
};

using MetricsSink = std::function<void(const MetricsRecord&)>;

TrainedModel train_model(const ExperimentConfig& cfg, const ExperimentData& data,
                         const KinematicHead& head, const MetricsSink& sink = {});

ZeroShotModel make_zero_shot_model(const ExperimentConfig& cfg, ParameterSet params, KinematicHead head);

struct EvalReport {
    EvalResult plain;
    std::vector<std::pair<int, EvalResult>> t_test_sweep;
    std::vector<std::pair<std::size_t, EvalResult>> crops;
    std::vector<std::pair<std::size_t, EvalResult>> downsamples;
};

nlohmann::json to_json(const EvalReport& r);

EvalReport evaluate(const ExperimentConfig& cfg, const ZeroShotModel& model, const ExperimentData& data);

struct SpectrumReport {
    int t_test = 0;
    BandEnergyReport ground_truth;  // mean over samples and noise draws
    BandEnergyReport estimate;
    /// Mean over samples and draws of |E_high(z0_hat) - E_high(z0)|.
    double high_band_gap = 0.0;
};

nlohmann::json to_json(const SpectrumReport& r);

SpectrumReport analyze_spectrum(const ExperimentConfig& cfg, const ZeroShotModel& model,
                                const ExperimentData& data);

// ---------------------------------------------------------------------------
// File-level runners used by the CLI
// ---------------------------------------------------------------------------

Checkpoint head_checkpoint(const ExperimentConfig& cfg, const HeadTrainingResult& head);
Checkpoint model_checkpoint(const ExperimentConfig& cfg, const TrainedModel& model, const KinematicHead& head);
/// Config, model and head of a model checkpoint. Throws ShapeError when the
/// stored parameters do not fit the stored config.
ExperimentConfig checkpoint_config(const Checkpoint& ckpt);
ZeroShotModel model_from_checkpoint(const Checkpoint& ckpt);

HeadTrainingResult run_distill(const ExperimentConfig& cfg, const std::filesystem::path& head_out);
void run_train(const ExperimentConfig& cfg, const std::filesystem::path& head_path,
               const std::filesystem::path& model_out, const std::filesystem::path& metrics_out);
/// `eval_override` replaces the eval/inference sections of the stored config when given.
nlohmann::json run_eval(const std::filesystem::path& model_path, const std::optional<ExperimentConfig>& eval_override);
nlohmann::json run_analyze_spectrum(const std::filesystem::path& model_path,
                                    const std::optional<ExperimentConfig>& eval_override);

struct AblationCell {
    std::string name;
    nlohmann::json overrides;  // {"dotted.key": value, ...}
};

struct AblationRow {
    std::string name;
    std::string fingerprint;
    double accuracy = 0.0;
    bool ok = false;
    std::string error;
};

std::vector<AblationCell> parse_ablation_matrix(const nlohmann::json& j);
ExperimentConfig apply_cell(const ExperimentConfig& base, const AblationCell& cell);
/// Distill, train and evaluate one cell; failures are captured in the row.
AblationRow run_cell(const ExperimentConfig& base, const AblationCell& cell);
std::vector<AblationRow> run_ablation(const ExperimentConfig& base, const std::vector<AblationCell>& cells,
                                      const std::filesystem::path& csv_out);

} // namespace fdsm
