#include "fdsm/diffusion.hpp"
#include "fdsm/rng.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <stdexcept>

using namespace fdsm;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("linear schedule golden values") {
    const NoiseSchedule s = make_schedule(50);
    REQUIRE(s.T == 50);
    CHECK(s.beta.front() == 1e-4);
    CHECK_THAT(s.beta.back(), WithinRel(0.02, 1e-15));
    CHECK_THAT(s.alpha_bar_at(1), WithinRel(0.9999, 1e-15));
    CHECK_THAT(s.alpha_bar_at(25), WithinRel(0.88271292944023748371, 1e-13));
    CHECK_THAT(s.alpha_bar_at(50), WithinRel(0.60295159732971490345, 1e-13));
    for (int t = 2; t <= 50; ++t) CHECK(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
}

TEST_CASE("cosine schedule is decreasing and bounded") {
    const NoiseSchedule s = make_schedule(50, BetaSchedule::Cosine);
    for (int t = 1; t <= 50; ++t) {
        CHECK(s.alpha_bar_at(t) > 0.0);
        CHECK(s.alpha_bar_at(t) < 1.0);
        if (t > 1) CHECK(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
    }
}

TEST_CASE("clean latent estimate inverts forward diffusion at every step") {
    const NoiseSchedule s = make_schedule(50);
    Rng rng(17);
    const Tensor z0 = normal_tensor({8, 16, 5}, rng, 3.0);
    const Tensor eps = normal_tensor({8, 16, 5}, rng);
    for (int t = 1; t <= 50; ++t) {
        const Tensor back = estimate_z0(forward_diffuse(z0, t, eps, s), eps, t, s);
        double worst = 0.0;
        for (std::size_t i = 0; i < z0.size(); ++i) worst = std::max(worst, std::abs(back[i] - z0[i]));
        CHECK(worst < 1e-10);
    }
}

TEST_CASE("batched forward diffusion uses per-sample timesteps") {
    const NoiseSchedule s = make_schedule(50);
    Rng rng(2);
    const Tensor z0 = normal_tensor({2, 1, 4, 1}, rng);
    const Tensor eps = normal_tensor({2, 1, 4, 1}, rng);
    const std::vector<int> t{3, 40};
    const Tensor zt = forward_diffuse_batch(z0, t, eps, s);
    for (std::size_t b = 0; b < 2; ++b) {
        const double a = s.alpha_bar_at(t[b]);
        for (std::size_t l = 0; l < 4; ++l) {
            const std::size_t i = b * 4 + l;
            CHECK_THAT(zt[i], WithinAbs(std::sqrt(a) * z0[i] + std::sqrt(1 - a) * eps[i], 1e-15));
        }
    }
}

TEST_CASE("timesteps outside 1..T are rejected") {
    const NoiseSchedule s = make_schedule(10);
    const Tensor z({2});
    CHECK_THROWS_AS(forward_diffuse(z, 0, z, s), std::out_of_range);
    CHECK_THROWS_AS(forward_diffuse(z, 11, z, s), std::out_of_range);
    CHECK_THROWS_AS(s.alpha_bar_at(0), std::out_of_range);
}
