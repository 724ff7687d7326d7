#include "fdsm/conditioning.hpp"

#include "fdsm/errors.hpp"
#include "fdsm/losses.hpp"
#include "fdsm/optim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace fdsm {

void to_json(nlohmann::json& j, const ActionClass& c) {
    j = nlohmann::json{{"id", c.id},
                       {"label", c.label},
                       {"rich_descriptions", c.rich_descriptions},
                       {"s_gt", c.s_gt}};
}

void from_json(const nlohmann::json& j, ActionClass& c) {
    j.at("id").get_to(c.id);
    j.at("label").get_to(c.label);
    j.at("rich_descriptions").get_to(c.rich_descriptions);
    j.at("s_gt").get_to(c.s_gt);
    if (c.s_gt != 0 && c.s_gt != 1) {
        throw ConfigError("class '" + c.label + "': s_gt must be 0 or 1");
    }
    if (c.rich_descriptions.empty()) {
        throw ConfigError("class '" + c.label + "' needs at least one rich description");
    }
}

std::vector<ActionClass> load_classes(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open class file " + path.string());
    const auto classes = nlohmann::json::parse(in).get<std::vector<ActionClass>>();
    std::vector<std::string> seen;
    for (const auto& c : classes) {
        if (std::find(seen.begin(), seen.end(), c.label) != seen.end()) {
            throw ConfigError("duplicate class label '" + c.label + "' in " + path.string());
        }
        seen.push_back(c.label);
    }
    return classes;
}

void save_classes(const std::filesystem::path& path, std::span<const ActionClass> classes) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write class file " + path.string());
    out << nlohmann::json(std::vector<ActionClass>(classes.begin(), classes.end())).dump(2) << '\n';
}

namespace {

void normalize(Tensor& v) {
    const double n = std::sqrt(sum_squares(v));
    for (auto& x : v.data()) x /= n;
}

} // namespace

Tensor embed_text(std::string_view token, std::size_t dim, std::uint64_t global_seed) {
    if (dim < 2) throw ConfigError("embedding dimension must be >= 2");
    Rng rng(fnv1a64(token) ^ global_seed);
    Tensor v = normal_tensor({dim}, rng);
    normalize(v);
    return v;
}

Tensor embed_sparse(const ActionClass& cls, std::size_t dim, std::uint64_t global_seed) {
    return embed_text(cls.label, dim, global_seed);
}

Tensor embed_rich(const ActionClass& cls, std::size_t desc_index, std::size_t dim,
                  std::uint64_t global_seed) {
    if (desc_index >= cls.rich_descriptions.size()) {
        throw std::out_of_range("description index " + std::to_string(desc_index) +
                                " out of range for class '" + cls.label + "'");
    }
    Tensor v = embed_text(cls.label, dim, global_seed) +
               0.5 * embed_text(cls.rich_descriptions[desc_index], dim, global_seed);
    if (cls.s_gt != 0) {
        v = v + (0.5 * cls.s_gt) * embed_text(kKinematicAxisToken, dim, global_seed);
    }
    normalize(v);
    return v;
}

KinematicHead init_head(std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed) {
    Rng rng(seed);
    KinematicHead head{input_dim, hidden_dim, {}};
    head.params.add("head.w1", normal_tensor({input_dim, hidden_dim}, rng,
                                             1.0 / std::sqrt(static_cast<double>(input_dim))));
    head.params.add("head.b1", Tensor({hidden_dim}));
    head.params.add("head.w2", normal_tensor({hidden_dim, 1}, rng,
                                             1.0 / std::sqrt(static_cast<double>(hidden_dim))));
    head.params.add("head.b2", Tensor({1}));
    return head;
}

KinematicHead zero_head(std::size_t input_dim, std::size_t hidden_dim) {
    KinematicHead head{input_dim, hidden_dim, {}};
    head.params.add("head.w1", Tensor({input_dim, hidden_dim}));
    head.params.add("head.b1", Tensor({hidden_dim}));
    head.params.add("head.w2", Tensor({hidden_dim, 1}));
    head.params.add("head.b2", Tensor({1}));
    return head;
}

KinematicHead head_from_params(const ParameterSet& params) {
    const Tensor& w1 = params.at("head.w1");
    KinematicHead head{w1.dim(0), w1.dim(1), {}};
    for (const char* name : {"head.w1", "head.b1", "head.w2", "head.b2"}) {
        head.params.add(name, params.at(name));
    }
    return head;
}

ad::Var head_forward(const ad::VarMap& head_vars, ad::Var d) {
    ad::Var h = ad::relu(ad::add_bias(ad::linear(d, head_vars["head.w1"]), head_vars["head.b1"]));
    return ad::sigmoid(ad::add_bias(ad::linear(h, head_vars["head.w2"]), head_vars["head.b2"]));
}

std::vector<double> predict_intensity_batch(const KinematicHead& head, const Tensor& d) {
    if (d.rank() != 2 || d.dim(1) != head.input_dim) {
        throw ShapeError("intensity head expects [N, " + std::to_string(head.input_dim) +
                         "] embeddings, got " + shape_to_string(d.shape()));
    }
    ad::Tape tape(false);
    const ad::VarMap vars = ad::bind(tape, head.params, false);
    const Tensor& out = head_forward(vars, tape.constant(d)).value();
    return {out.data().begin(), out.data().end()};
}

double predict_intensity(const KinematicHead& head, const Tensor& d) {
    if (d.size() != head.input_dim) {
        throw ShapeError("intensity head expects a " + std::to_string(head.input_dim) +
                         "-dim embedding, got " + shape_to_string(d.shape()));
    }
    return predict_intensity_batch(head, d.reshaped({1, d.size()})).front();
}

DistillationSet distillation_set(std::span<const ActionClass> classes, std::size_t dim,
                                 std::uint64_t text_seed) {
    std::vector<Tensor> rows;
    std::vector<double> labels;
    for (const auto& cls : classes) {
        rows.push_back(embed_sparse(cls, dim, text_seed));
        labels.push_back(cls.s_gt);
        for (std::size_t n = 0; n < cls.rich_descriptions.size(); ++n) {
            rows.push_back(embed_rich(cls, n, dim, text_seed));
            labels.push_back(cls.s_gt);
        }
    }
    const std::size_t count = labels.size();
    return {stack(rows), Tensor({count, 1}, std::move(labels))};
}

HeadTrainingResult train_head(std::span<const ActionClass> classes, const HeadTrainingOptions& opts) {
    if (classes.empty()) throw ConfigError("intensity head needs at least one class");
    HeadTrainingResult result;
    bool any_high = false, any_low = false;
    for (const auto& c : classes) (c.s_gt ? any_high : any_low) = true;
    result.degenerate_labels = !(any_high && any_low);

    const DistillationSet data = distillation_set(classes, opts.embed_dim, opts.text_seed);
    KinematicHead head = init_head(opts.embed_dim, opts.hidden_dim, opts.init_seed);
    OptimizerState state = OptimizerState::for_params(
        head.params, AdamWHyper{.learning_rate = opts.learning_rate, .weight_decay = 0.0});

    const ad::LossFn loss_fn = [&data](ad::Tape& tape, const ad::VarMap& vars) {
        return bce_distill_loss(head_forward(vars, tape.constant(data.embeddings)), data.labels);
    };
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        auto step = ad::value_and_grad(loss_fn, head.params);
        auto updated = adamw_step(head.params, step.grads, state);
        head.params = std::move(updated.params);
        state = std::move(updated.state);
    }
    result.final_loss = ad::evaluate(loss_fn, head.params);

    const auto scores = predict_intensity_batch(head, data.embeddings);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        correct += (scores[i] >= 0.5 ? 1.0 : 0.0) == data.labels[i];
    }
    result.accuracy = static_cast<double>(correct) / static_cast<double>(scores.size());
    result.head = std::move(head);
    return result;
}

CurriculumKind curriculum_kind_from_string(const std::string& name) {
    if (name == "cosine") return CurriculumKind::Cosine;
    if (name == "linear") return CurriculumKind::Linear;
    if (name == "step") return CurriculumKind::Step;
    if (name == "fixed") return CurriculumKind::Fixed;
    throw ConfigError("unknown curriculum schedule '" + name + "'");
}

std::string to_string(CurriculumKind kind) {
    switch (kind) {
    case CurriculumKind::Cosine: return "cosine";
    case CurriculumKind::Linear: return "linear";
    case CurriculumKind::Step: return "step";
    case CurriculumKind::Fixed: return "fixed";
    }
    return "cosine";
}

double curriculum_prob(const CurriculumSchedule& schedule, std::int64_t e) {
    const std::int64_t total = std::max<std::int64_t>(1, schedule.total);
    e = std::clamp<std::int64_t>(e, 0, total);
    const double frac = static_cast<double>(e) / static_cast<double>(total);
    switch (schedule.kind) {
    case CurriculumKind::Cosine: return 0.5 * (1.0 + std::cos(frac * std::numbers::pi));
    case CurriculumKind::Linear: return 1.0 - frac;
    case CurriculumKind::Step: {
        const std::int64_t interval =
            schedule.step_interval > 0 ? schedule.step_interval : std::max<std::int64_t>(1, total / 5);
        return std::ldexp(1.0, -static_cast<int>(e / interval));
    }
    case CurriculumKind::Fixed: return std::clamp(schedule.fixed_p, 0.0, 1.0);
    }
    return 0.0;
}

Condition sample_condition(const ActionClass& cls, double gamma, Rng& rng, std::size_t dim,
                           std::uint64_t text_seed) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("curriculum probability outside [0, 1]");
    Condition c;
    if (uniform01(rng) < gamma) {
        c.source = ConditionSource::Rich;
        c.desc_index = std::uniform_int_distribution<std::size_t>(
            0, cls.rich_descriptions.size() - 1)(rng);
        c.embedding = embed_rich(cls, c.desc_index, dim, text_seed);
    } else {
        c.embedding = embed_sparse(cls, dim, text_seed);
    }
    return c;
}

} // namespace fdsm
