#include "fdsm/classifier.hpp"
#include "fdsm/errors.hpp"
#include "fdsm/rng.hpp"
#include "fdsm/synthdata.hpp"

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

using namespace fdsm;
using Catch::Matchers::WithinRel;

namespace {

struct Fixture {
    std::vector<SynthClass> classes;
    std::vector<ActionClass> actions;
    ZeroShotModel model;
};

const Fixture& fixture() {
    static const Fixture f = [] {
        Fixture out;
        SynthSpec spec;
        spec.num_classes = 6;
        Rng rng(4);
        out.classes = generate_class_set(spec, rng);
        out.actions = action_classes(out.classes);
        HeadTrainingOptions opts;
        opts.epochs = 100;
        opts.text_seed = 5;
        out.model.config = DenoiserConfig{};
        out.model.params = init_denoiser(out.model.config, 1);
        Rng jitter_rng(2);
        for (auto& [name, value] : out.model.params) {
            const Tensor j = normal_tensor(value.shape(), jitter_rng, 0.1);
            for (std::size_t i = 0; i < value.size(); ++i) value[i] += j[i];
        }
        out.model.schedule = make_schedule(50);
        out.model.head = train_head(out.actions, opts).head;
        out.model.embed_dim = opts.embed_dim;
        out.model.text_seed = opts.text_seed;
        return out;
    }();
    return f;
}

Tensor sample_latent(std::size_t class_index, std::uint64_t seed) {
    Rng rng(seed);
    return synth_sample(fixture().classes[class_index], rng).z0;
}

// Distances recomputed one candidate and one draw at a time.
std::vector<std::vector<double>> oracle_table(const Tensor& z0, std::span<const ActionClass> candidates,
                                              const InferenceConfig& cfg, std::uint64_t seed) {
    std::vector<std::vector<double>> table;
    for (int n = 0; n < cfg.num_noise_seeds; ++n) {
        Rng rng(child_seed(seed, static_cast<std::uint64_t>(n)));
        const Tensor eps = normal_tensor(z0.shape(), rng);
        std::vector<double> row;
        for (const auto& c : candidates) row.push_back(score_candidate(fixture().model, z0, c, eps, cfg));
        table.push_back(row);
    }
    return table;
}

} // namespace

TEST_CASE("classification agrees with a per-candidate re-evaluation") {
    const auto& f = fixture();
    const InferenceConfig cfg{.t_test = 25, .num_noise_seeds = 4};
    const Tensor z0 = sample_latent(0, 10);
    const auto table = oracle_table(z0, f.actions, cfg, 77);
    const Classification c = classify(f.model, z0, f.actions, cfg, 77);

    std::size_t best = 0;
    for (std::size_t k = 0; k < f.actions.size(); ++k) {
        double mean = 0.0;
        for (const auto& row : table) mean += row[k];
        mean /= static_cast<double>(table.size());
        CHECK_THAT(c.mean_distance.at(f.actions[k].id), WithinRel(mean, 1e-10));
        if (mean < c.mean_distance.at(f.actions[best].id) - 1e-12) best = k;
    }
    CHECK(c.predicted == f.actions[best].id);
}

TEST_CASE("scores are unsquared Euclidean distances") {
    const auto& f = fixture();
    const InferenceConfig cfg{.t_test = 10, .num_noise_seeds = 1};
    const Tensor z0 = sample_latent(1, 3);
    Rng rng(9);
    const Tensor eps = normal_tensor(z0.shape(), rng);
    const CandidateCondition cond = candidate_condition(f.model, f.actions[2]);
    const Tensor eps_hat = denoise(f.model.params, f.model.config, forward_diffuse(z0, 10, eps, f.model.schedule), 10,
                                   cond.embedding, cond.s_hat);
    double sq = 0.0;
    for (std::size_t i = 0; i < eps.size(); ++i) sq += (eps[i] - eps_hat[i]) * (eps[i] - eps_hat[i]);
    CHECK_THAT(score_candidate(f.model, z0, f.actions[2], eps, cfg), WithinRel(std::sqrt(sq), 1e-12));
}

TEST_CASE("vote aggregation takes the majority of per-draw winners") {
    const auto& f = fixture();
    const InferenceConfig cfg{.t_test = 40, .num_noise_seeds = 5, .aggregation = NoiseAggregation::Vote};
    const Tensor z0 = sample_latent(3, 8);
    const auto table = oracle_table(z0, f.actions, cfg, 5);
    std::vector<int> votes(f.actions.size(), 0);
    for (const auto& row : table) ++votes[std::min_element(row.begin(), row.end()) - row.begin()];
    const std::size_t winner = std::max_element(votes.begin(), votes.end()) - votes.begin();
    CHECK(classify(f.model, z0, f.actions, cfg, 5).predicted == f.actions[winner].id);
}

TEST_CASE("single candidate always wins") {
    const auto& f = fixture();
    const std::vector<ActionClass> one{f.actions[4]};
    CHECK(classify(f.model, sample_latent(0, 1), one, InferenceConfig{}, 3).predicted == f.actions[4].id);
}

TEST_CASE("candidate order does not matter and results are deterministic") {
    const auto& f = fixture();
    const InferenceConfig cfg{.t_test = 25, .num_noise_seeds = 3};
    std::vector<ActionClass> reversed(f.actions.rbegin(), f.actions.rend());
    const Tensor z0 = sample_latent(2, 4);
    const Classification a = classify(f.model, z0, f.actions, cfg, 11);
    const Classification b = classify(f.model, z0, reversed, cfg, 11);
    const Classification again = classify(f.model, z0, f.actions, cfg, 11);
    CHECK(a.predicted == b.predicted);
    CHECK(a.mean_distance == b.mean_distance);
    CHECK(a.mean_distance == again.mean_distance);
}

TEST_CASE("evaluation protocol errors") {
    const auto& f = fixture();
    const InferenceConfig cfg{.t_test = 25, .num_noise_seeds = 2};
    std::vector<ActionClass> dup{f.actions[0], f.actions[0]};
    CHECK_THROWS_AS(classify(f.model, sample_latent(0, 1), dup, cfg, 0), ConfigError);
    CHECK_THROWS_AS(classify(f.model, sample_latent(0, 1), std::vector<ActionClass>{}, cfg, 0), ConfigError);
    CHECK_THROWS_AS(evaluate_accuracy(f.model, std::vector<Sample>{}, f.actions, cfg, 0), ProtocolError);
    const std::vector<Sample> stray{Sample{sample_latent(0, 1), f.actions[0].id, Split::Seen}};
    const std::vector<ActionClass> others{f.actions[1], f.actions[2]};
    CHECK_THROWS_AS(evaluate_accuracy(f.model, stray, others, cfg, 0), ProtocolError);
    CHECK_THROWS(InferenceConfig{.t_test = 51}.validate(50));
    CHECK_THROWS(InferenceConfig{.t_test = 10, .num_noise_seeds = 0}.validate(50));
}

TEST_CASE("evaluation tallies a confusion matrix") {
    const auto& f = fixture();
    const InferenceConfig cfg{.t_test = 25, .num_noise_seeds = 2};
    Rng rng(6);
    std::vector<Sample> test;
    for (std::size_t c : {0u, 1u, 2u}) {
        for (int i = 0; i < 2; ++i) test.push_back(synth_sample(f.classes[c], rng));
    }
    const std::vector<ActionClass> cands{f.actions[2], f.actions[0], f.actions[1]};
    const EvalResult r = evaluate_accuracy(f.model, test, cands, cfg, 21);
    CHECK(r.total == 6);
    std::size_t tally = 0, diag = 0;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            tally += r.confusion[i][j];
            if (i == j) diag += r.confusion[i][j];
        }
    CHECK(tally == 6);
    CHECK(diag == r.correct);
    CHECK(std::is_sorted(r.class_ids.begin(), r.class_ids.end()));
    std::size_t recount = 0;
    for (std::size_t i = 0; i < test.size(); ++i)
        recount += classify(f.model, test[i].z0, cands, cfg, child_seed(21, i)).predicted == test[i].class_id;
    CHECK(recount == r.correct);
    const auto j = to_json(r);
    CHECK(j.at("total") == 6);
    CHECK(j.at("per_class").size() == 3);
}
