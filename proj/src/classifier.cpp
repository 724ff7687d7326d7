#include "fdsm/classifier.hpp"

#include "fdsm/errors.hpp"

#include <algorithm>
#include <cmath>

namespace fdsm {

NoiseAggregation noise_aggregation_from_string(const std::string& name) {
    if (name == "mean") return NoiseAggregation::MeanDistance;
    if (name == "vote") return NoiseAggregation::Vote;
    throw ConfigError("unknown noise aggregation '" + name + "'");
}

std::string to_string(NoiseAggregation mode) {
    return mode == NoiseAggregation::MeanDistance ? "mean" : "vote";
}

void InferenceConfig::validate(int T) const {
    if (t_test < 1 || t_test > T) {
        throw ConfigError("t_test " + std::to_string(t_test) + " outside [1, " + std::to_string(T) + "]");
    }
    if (num_noise_seeds < 1) throw ConfigError("num_noise_seeds must be >= 1");
}

CandidateCondition candidate_condition(const ZeroShotModel& model, const ActionClass& cls) {
    CandidateCondition c{cls.id, embed_sparse(cls, model.embed_dim, model.text_seed), 0.0};
    c.s_hat = predict_intensity(model.head, c.embedding);
    return c;
}

namespace {

double distance(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(acc);
}

std::vector<CandidateCondition> sorted_conditions(const ZeroShotModel& model,
                                                  std::span<const ActionClass> candidates) {
    if (candidates.empty()) throw ConfigError("candidate set is empty");
    std::vector<CandidateCondition> out;
    for (const auto& c : candidates) out.push_back(candidate_condition(model, c));
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.class_id < b.class_id; });
    for (std::size_t i = 1; i < out.size(); ++i) {
        if (out[i].class_id == out[i - 1].class_id) {
            throw ConfigError("duplicate candidate class id " + std::to_string(out[i].class_id));
        }
    }
    return out;
}

// Distances [draw][candidate] for one latent, every (draw, candidate) pair in one batch.
std::vector<std::vector<double>> distance_table(const ZeroShotModel& model, const Tensor& z0,
                                                std::span<const CandidateCondition> conds,
                                                const InferenceConfig& cfg, std::uint64_t seed) {
    cfg.validate(model.schedule.T);
    const std::size_t K = conds.size();
    const std::size_t N = static_cast<std::size_t>(cfg.num_noise_seeds);
    const std::size_t B = K * N;

    std::vector<Tensor> eps(N);
    std::vector<Tensor> z_t(B), d(B);
    std::vector<double> s_hat(B);
    for (std::size_t n = 0; n < N; ++n) {
        Rng rng(child_seed(seed, n));
        eps[n] = normal_tensor(z0.shape(), rng);
        const Tensor zt = forward_diffuse(z0, cfg.t_test, eps[n], model.schedule);
        for (std::size_t k = 0; k < K; ++k) {
            z_t[n * K + k] = zt;
            d[n * K + k] = conds[k].embedding;
            s_hat[n * K + k] = conds[k].s_hat;
        }
    }
    const std::vector<int> t(B, cfg.t_test);
    Rng gating_rng(substream_seed(seed, "gating"));
    const Tensor eps_hat = denoise_batch(model.params, model.config, stack(z_t), t, stack(d), s_hat, &gating_rng);

    const std::size_t per = z0.size();
    std::vector<std::vector<double>> table(N, std::vector<double>(K));
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < K; ++k)
            table[n][k] = distance(eps[n].data(), eps_hat.data().subspan((n * K + k) * per, per));
    return table;
}

// Lowest index among the minima; conditions are sorted by id, so this is the lowest id.
std::size_t argmin(std::span<const double> values) {
    return static_cast<std::size_t>(std::min_element(values.begin(), values.end()) - values.begin());
}

Classification aggregate(std::span<const CandidateCondition> conds,
                         const std::vector<std::vector<double>>& table, NoiseAggregation mode) {
    const std::size_t K = conds.size();
    std::vector<double> mean(K, 0.0);
    for (const auto& row : table)
        for (std::size_t k = 0; k < K; ++k) mean[k] += row[k];
    for (auto& m : mean) m /= static_cast<double>(table.size());

    Classification out;
    for (std::size_t k = 0; k < K; ++k) out.mean_distance[conds[k].class_id] = mean[k];
    if (mode == NoiseAggregation::MeanDistance) {
        out.predicted = conds[argmin(mean)].class_id;
    } else {
        std::vector<double> negative_votes(K, 0.0);
        for (const auto& row : table) negative_votes[argmin(row)] -= 1.0;
        out.predicted = conds[argmin(negative_votes)].class_id;
    }
    return out;
}

} // namespace

double score_candidate(const ZeroShotModel& model, const Tensor& z0, const ActionClass& candidate,
                       const Tensor& eps_test, const InferenceConfig& cfg, Rng* gating_rng) {
    require_same_shape(z0, eps_test, "score_candidate");
    cfg.validate(model.schedule.T);
    const CandidateCondition cond = candidate_condition(model, candidate);
    const Tensor z_t = forward_diffuse(z0, cfg.t_test, eps_test, model.schedule);
    const Tensor eps_hat = denoise(model.params, model.config, z_t, cfg.t_test, cond.embedding, cond.s_hat, gating_rng);
    return distance(eps_test.data(), eps_hat.data());
}

Classification classify(const ZeroShotModel& model, const Tensor& z0,
                        std::span<const ActionClass> candidates, const InferenceConfig& cfg,
                        std::uint64_t seed) {
    const auto conds = sorted_conditions(model, candidates);
    return aggregate(conds, distance_table(model, z0, conds, cfg, seed), cfg.aggregation);
}

double EvalResult::class_accuracy(std::size_t row) const {
    std::size_t total_row = 0;
    for (auto n : confusion.at(row)) total_row += n;
    return total_row ? static_cast<double>(confusion[row][row]) / static_cast<double>(total_row) : 0.0;
}

nlohmann::json to_json(const EvalResult& r) {
    nlohmann::json per_class = nlohmann::json::object();
    for (std::size_t i = 0; i < r.class_ids.size(); ++i) per_class[r.labels[i]] = r.class_accuracy(i);
    return {{"accuracy", r.accuracy},
            {"correct", r.correct},
            {"total", r.total},
            {"class_ids", r.class_ids},
            {"per_class", per_class},
            {"confusion", r.confusion},
            {"t_test", r.t_test},
            {"seeds", r.seeds}};
}

EvalResult evaluate_accuracy(const ZeroShotModel& model, std::span<const Sample> test_set,
                             std::span<const ActionClass> candidates, const InferenceConfig& cfg,
                             std::uint64_t seed) {
    if (test_set.empty()) throw ProtocolError("evaluation set is empty");
    const auto conds = sorted_conditions(model, candidates);
    EvalResult result;
    result.t_test = cfg.t_test;
    result.seeds = cfg.num_noise_seeds;
    for (const auto& c : conds) {
        result.class_ids.push_back(c.class_id);
        const auto it = std::find_if(candidates.begin(), candidates.end(),
                                     [&](const ActionClass& a) { return a.id == c.class_id; });
        result.labels.push_back(it->label);
    }
    const std::size_t K = conds.size();
    result.confusion.assign(K, std::vector<std::size_t>(K, 0));
    const auto row_of = [&](int id) {
        return static_cast<std::size_t>(std::find(result.class_ids.begin(), result.class_ids.end(), id) -
                                        result.class_ids.begin());
    };
    for (const auto& s : test_set) {
        if (row_of(s.class_id) == K) {
            throw ProtocolError("test sample of class " + std::to_string(s.class_id) +
                                " is not among the candidates");
        }
    }
    for (std::size_t i = 0; i < test_set.size(); ++i) {
        const Sample& s = test_set[i];
        const auto table = distance_table(model, s.z0, conds, cfg, child_seed(seed, i));
        const int predicted = aggregate(conds, table, cfg.aggregation).predicted;
        ++result.confusion[row_of(s.class_id)][row_of(predicted)];
        result.correct += predicted == s.class_id;
    }
    result.total = test_set.size();
    result.accuracy = static_cast<double>(result.correct) / static_cast<double>(result.total);
    return result;
}

} // namespace fdsm
