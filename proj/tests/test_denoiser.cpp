#include "fdsm/denoiser.hpp"
#include "fdsm/errors.hpp"
#include "fdsm/rng.hpp"
#include "oracles.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>

using namespace fdsm;
using Catch::Matchers::WithinAbs;

namespace {

// Shape accounting for the conditional transformer.
std::size_t expected_parameter_count(const DenoiserConfig& c) {
    const std::size_t F = c.channels * c.joints, D = c.model_dim, H = c.mlp_ratio * D, T = c.text_dim;
    const std::size_t io = (F * D + D) + (D * F + F);
    const std::size_t cond = (T * D + D) + 2 * (D * D + D);
    const std::size_t modulation = 4 * (D * D + D);
    const std::size_t attention = 4 * D * D + D;
    const std::size_t mlp = (D * H + H) + (H * D + D);
    return io + cond + c.depth * (modulation + attention + mlp);
}

struct Inputs {
    Tensor z_t, d;
    std::vector<int> t;
    std::vector<double> s_hat;
};

Inputs random_inputs(const DenoiserConfig& c, std::size_t batch, std::uint64_t seed) {
    Rng rng(seed);
    Inputs in;
    in.z_t = normal_tensor({batch, c.channels, c.length, c.joints}, rng);
    in.d = normal_tensor({batch, c.text_dim}, rng, 0.125);
    for (std::size_t b = 0; b < batch; ++b) {
        in.t.push_back(static_cast<int>(1 + 7 * b % 50));
        in.s_hat.push_back(0.2 + 0.3 * static_cast<double>(b % 3));
    }
    return in;
}

ParameterSet trained_like(const DenoiserConfig& c, std::uint64_t seed) {
    ParameterSet p = init_denoiser(c, seed);
    Rng rng(seed + 100);
    for (auto& [name, value] : p) {
        const Tensor jitter = normal_tensor(value.shape(), rng, 0.1);
        for (std::size_t i = 0; i < value.size(); ++i) value[i] += jitter[i];
    }
    return p;
}

} // namespace

TEST_CASE("parameter count follows the layout") {
    const DenoiserConfig c;
    CHECK(init_denoiser(c, 0).scalar_count() == expected_parameter_count(c));
    CHECK(expected_parameter_count(c) == 31912);
    DenoiserConfig wide = c;
    wide.model_dim = 48;
    wide.depth = 3;
    CHECK(init_denoiser(wide, 0).scalar_count() == expected_parameter_count(wide));
}

TEST_CASE("fresh denoiser predicts exactly zero noise") {
    const DenoiserConfig c;
    const Inputs in = random_inputs(c, 3, 1);
    const Tensor out = denoise_batch(init_denoiser(c, 5), c, in.z_t, in.t, in.d, in.s_hat);
    CHECK(out.shape() == in.z_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0);
}

TEST_CASE("timestep embedding golden values") {
    const std::vector<double> golden{-0.1323517500977730289, 0.99120281186347359808, 0.59847214410395649405,
                                     -0.80114361554693371483, 0.2474039592545229296,  0.96891242171064478414,
                                     0.024997395914712330662, 0.99968751627570258625};
    const Tensor e = timestep_embedding(25, 8);
    REQUIRE(e.size() == 8);
    for (std::size_t i = 0; i < 8; ++i) CHECK_THAT(e[i], WithinAbs(golden[i], 1e-12));
    CHECK_THROWS_AS(timestep_embedding(1, 7), ConfigError);
}

TEST_CASE("gating modes") {
    DenoiserConfig c;
    const std::vector<double> s{0.2, 0.7};
    CHECK(resolve_gating(c, s, nullptr) == s);
    c.gating = GatingMode::None;
    CHECK(resolve_gating(c, s, nullptr) == std::vector<double>{0, 0});
    c.gating = GatingMode::Uniform;
    CHECK(resolve_gating(c, s, nullptr) == std::vector<double>{1, 1});
    c.use_srm = false;
    CHECK(resolve_gating(c, s, nullptr) == std::vector<double>{0, 0});
    c.use_srm = true;
    c.gating = GatingMode::Random;
    CHECK_THROWS(resolve_gating(c, s, nullptr));
    Rng rng(1);
    for (double v : resolve_gating(c, s, &rng)) CHECK((v >= 0.0 && v <= 1.0));
    c.gating = GatingMode::Predicted;
    const std::vector<double> bad{1.5};
    CHECK_THROWS(resolve_gating(c, bad, nullptr));
    CHECK(gating_mode_from_string(to_string(GatingMode::Uniform)) == GatingMode::Uniform);
}

TEST_CASE("no gating is bitwise identical to removing the module") {
    DenoiserConfig none;
    none.gating = GatingMode::None;
    DenoiserConfig off;
    off.use_srm = false;
    const ParameterSet p = trained_like(none, 3);
    const Inputs in = random_inputs(none, 4, 2);
    const Tensor a = denoise_batch(p, none, in.z_t, in.t, in.d, in.s_hat);
    const Tensor b = denoise_batch(p, off, in.z_t, in.t, in.d, in.s_hat);
    CHECK(a == b);
    const Tensor with = denoise_batch(p, DenoiserConfig{}, in.z_t, in.t, in.d, in.s_hat);
    CHECK_FALSE(a == with);
}

TEST_CASE("the spectral module runs once per block") {
    for (std::size_t depth : {1u, 2u, 4u}) {
        DenoiserConfig c;
        c.depth = depth;
        const ParameterSet p = init_denoiser(c, 0);
        const Inputs in = random_inputs(c, 2, 4);
        ad::Tape tape(false);
        const ad::VarMap vars = ad::bind(tape, p, false);
        DenoiseTrace trace;
        (void)denoise_forward(vars, c, tape.constant(in.z_t), in.t, tape.constant(in.d), in.s_hat, &trace);
        CHECK(trace.srm_applications == depth);
    }
}

TEST_CASE("batched and single-sample forms agree") {
    const DenoiserConfig c;
    const ParameterSet p = trained_like(c, 8);
    const Inputs in = random_inputs(c, 3, 6);
    const Tensor batch = denoise_batch(p, c, in.z_t, in.t, in.d, in.s_hat);
    const std::size_t n = c.channels * c.length * c.joints;
    for (std::size_t b = 0; b < 3; ++b) {
        Tensor z({c.channels, c.length, c.joints});
        Tensor d({c.text_dim});
        for (std::size_t i = 0; i < n; ++i) z[i] = in.z_t[b * n + i];
        for (std::size_t i = 0; i < c.text_dim; ++i) d[i] = in.d[b * c.text_dim + i];
        const Tensor single = denoise(p, c, z, in.t[b], d, in.s_hat[b]);
        for (std::size_t i = 0; i < n; ++i) CHECK_THAT(single[i], WithinAbs(batch[b * n + i], 1e-12));
    }
}

TEST_CASE("shorter sequences run through the same weights") {
    const DenoiserConfig c;
    const ParameterSet p = trained_like(c, 2);
    DenoiserConfig cropped = c;
    cropped.length = 10;
    const Inputs in = random_inputs(cropped, 2, 3);
    const Tensor out = denoise_batch(p, cropped, in.z_t, in.t, in.d, in.s_hat);
    CHECK(out.shape() == in.z_t.shape());
    CHECK(out.all_finite());
}

TEST_CASE("full training loss gradient matches central differences") {
    for (std::uint64_t seed : {0u, 1u}) {
        const auto r = testing::composite_gradient_check(seed, 4);
        INFO("seed " << seed << " over " << r.coordinates << " coordinates, worst " << r.worst_name << " tape "
                            << r.worst_analytic << " numeric " << r.worst_numeric);
        CHECK(r.max_rel_error < 1e-4);
    }
}
