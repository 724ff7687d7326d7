#pragma once

#include "fdsm/autodiff.hpp"
#include "fdsm/rng.hpp"
#include "fdsm/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fdsm {

struct ActionClass {
    int id = 0;
    std::string label;
    std::vector<std::string> rich_descriptions;
    int s_gt = 0;
};

void to_json(nlohmann::json& j, const ActionClass& c);
void from_json(const nlohmann::json& j, ActionClass& c);

/// Reads `[{id, label, rich_descriptions: [...], s_gt}, ...]`.
std::vector<ActionClass> load_classes(const std::filesystem::path& path);
void save_classes(const std::filesystem::path& path, std::span<const ActionClass> classes);

// ---------------------------------------------------------------------------
// Text embedding stand-in
// ---------------------------------------------------------------------------

/// Shared direction that rich descriptions of dynamic classes lean towards.
inline constexpr std::string_view kKinematicAxisToken = "##kinematic-axis##";

/// Unit vector of standard-normal draws seeded by fnv1a64(token) ^ global_seed.
Tensor embed_text(std::string_view token, std::size_t dim, std::uint64_t global_seed);

/// normalize(e(label) + 0.5 e(description) + 0.5 s_gt e(kinematic axis)).
Tensor embed_rich(const ActionClass& cls, std::size_t desc_index, std::size_t dim,
                  std::uint64_t global_seed);

/// Sparse view: the label embedding alone.
Tensor embed_sparse(const ActionClass& cls, std::size_t dim, std::uint64_t global_seed);

// ---------------------------------------------------------------------------
// Kinematic projection head
// ---------------------------------------------------------------------------

/// Two-layer MLP d -> hidden -> 1 with ReLU, followed by a sigmoid.
struct KinematicHead {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 256;
    ParameterSet params;  // head.w1 [in, hidden], head.b1, head.w2 [hidden, 1], head.b2
};

KinematicHead init_head(std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed);
/// Head with every weight and bias zero (outputs exactly 0.5).
KinematicHead zero_head(std::size_t input_dim, std::size_t hidden_dim = 256);
/// Rebuilds a head from checkpoint arrays named head.*.
KinematicHead head_from_params(const ParameterSet& params);

/// Probabilities [N, 1] for embeddings d [N, input_dim].
ad::Var head_forward(const ad::VarMap& head_vars, ad::Var d);

double predict_intensity(const KinematicHead& head, const Tensor& d);
/// One score per row of d [N, input_dim].
std::vector<double> predict_intensity_batch(const KinematicHead& head, const Tensor& d);

struct HeadTrainingOptions {
    int epochs = 500;
    double learning_rate = 1e-3;
    std::size_t hidden_dim = 256;
    std::size_t embed_dim = 64;
    std::uint64_t text_seed = 0;
    std::uint64_t init_seed = 0;
};

struct HeadTrainingResult {
    KinematicHead head;
    double accuracy = 0.0;
    double final_loss = 0.0;
    /// Set when every class carries the same intensity label.
    bool degenerate_labels = false;
};

/// Distillation training set: the sparse embedding and every rich embedding
/// of every class, each labelled with the class's s_gt.
struct DistillationSet {
    Tensor embeddings;  // [N, dim]
    Tensor labels;      // [N, 1]
};

DistillationSet distillation_set(std::span<const ActionClass> classes, std::size_t dim,
                                 std::uint64_t text_seed);

/// Full-batch AdamW (no weight decay) on mean BCE.
HeadTrainingResult train_head(std::span<const ActionClass> classes, const HeadTrainingOptions& opts);

// ---------------------------------------------------------------------------
// Curriculum
// ---------------------------------------------------------------------------

enum class CurriculumKind { Cosine, Linear, Step, Fixed };

CurriculumKind curriculum_kind_from_string(const std::string& name);
std::string to_string(CurriculumKind kind);

struct CurriculumSchedule {
    CurriculumKind kind = CurriculumKind::Cosine;
    std::int64_t total = 1;
    double fixed_p = 0.5;
    /// Halving period of the step schedule; 0 selects total / 5.
    std::int64_t step_interval = 0;
};

/// Probability of conditioning on a rich description at iteration e (clamped to [0, total]).
double curriculum_prob(const CurriculumSchedule& schedule, std::int64_t e);

enum class ConditionSource { Rich, Sparse };

struct Condition {
    Tensor embedding;
    ConditionSource source = ConditionSource::Sparse;
    std::size_t desc_index = 0;
};

/// Rich (uniform description) with probability gamma, else the sparse label.
Condition sample_condition(const ActionClass& cls, double gamma, Rng& rng, std::size_t dim,
                           std::uint64_t text_seed);

} // namespace fdsm
