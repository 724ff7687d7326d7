#include "fdsm/dct_kernel.hpp"
#include "fdsm/errors.hpp"
#include "fdsm/losses.hpp"
#include "fdsm/rng.hpp"
#include "fdsm/spectral.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <stdexcept>

using namespace fdsm;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("spectral weight piecewise values") {
    const SpectralWeightConfig cfg{.cutoff = 4, .gamma = 0.8, .T = 50};
    for (int t : {1, 25, 50}) {
        for (std::size_t k = 0; k < 4; ++k) CHECK(spectral_weight(k, t, cfg) == 1.0);
    }
    CHECK(spectral_weight(4, 50, cfg) == 0.0);
    CHECK(spectral_weight(15, 50, cfg) == 0.0);
    CHECK_THAT(spectral_weight(4, 25, cfg), WithinRel(0.4, 1e-15));
    CHECK_THAT(spectral_weight(9, 10, cfg), WithinRel(0.8 * 0.8, 1e-15));
    const std::vector<double> w = spectral_weights(6, 25, SpectralWeightConfig{.cutoff = 2, .gamma = 1.0, .T = 50});
    CHECK(w == std::vector<double>{1, 1, 0.5, 0.5, 0.5, 0.5});
    CHECK_THROWS_AS(spectral_weight(0, 0, cfg), std::out_of_range);
    CHECK_THROWS_AS(spectral_weight(0, 51, cfg), std::out_of_range);
}

TEST_CASE("unit-weight spectral loss equals time-domain squared error") {
    Rng rng(21);
    for (std::size_t length : {8u, 16u, 32u}) {
        const Tensor a = normal_tensor({3, length, 5}, rng);
        const Tensor b = normal_tensor({3, length, 5}, rng);
        const std::vector<double> ones(length, 1.0);
        double direct = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) direct += (a[i] - b[i]) * (a[i] - b[i]);
        direct /= static_cast<double>(a.size());
        CHECK_THAT(spectral_loss_weighted(a, b, ones), WithinAbs(direct, 1e-9));
    }
}

TEST_CASE("spectral loss weights the DCT coefficients") {
    Tensor a({1, 4, 1});
    Tensor b({1, 4, 1});
    // A pure DCT basis vector k=3 with amplitude 2 in the difference.
    const Tensor basis = dct_matrix(4);
    for (std::size_t l = 0; l < 4; ++l) a[l] = 2.0 * basis.at(3, l);
    const SpectralWeightConfig cfg{.cutoff = 2, .gamma = 1.0, .T = 10};
    CHECK_THAT(spectral_loss(a, b, 5, cfg), WithinAbs(0.5 * 4.0 / 4.0, 1e-12));
    CHECK_THAT(spectral_loss(a, b, 10, cfg), WithinAbs(0.0, 1e-12));
}

TEST_CASE("diffusion loss is the elementwise mean squared error") {
    const Tensor a({2, 2}, std::vector<double>{1, 2, 3, 4});
    const Tensor b({2, 2}, std::vector<double>{1, 0, 3, 1});
    CHECK(diffusion_loss(a, b) == (4.0 + 9.0) / 4.0);
    CHECK(total_loss(0.5, 0.25, 2.0) == 1.0);
}

TEST_CASE("binary cross-entropy scalar cases") {
    CHECK_THAT(bce_distill_loss(0.5, 1), WithinAbs(std::log(2.0), 1e-9));
    CHECK_THAT(bce_distill_loss(0.5, 0), WithinAbs(std::log(2.0), 1e-9));
    CHECK_THAT(bce_distill_loss(0.9, 1), WithinAbs(-std::log(0.9), 1e-9));
    CHECK_THAT(bce_distill_loss(0.9, 0), WithinAbs(-std::log(0.1), 1e-9));
    CHECK(std::isfinite(bce_distill_loss(0.0, 1)));
    CHECK(std::isfinite(bce_distill_loss(1.0, 0)));
}

TEST_CASE("batched loss forms agree with the scalar forms") {
    Rng rng(8);
    const Tensor z0 = normal_tensor({2, 2, 8, 3}, rng);
    const Tensor zh = normal_tensor({2, 2, 8, 3}, rng);
    const std::vector<int> t{5, 30};
    const SpectralWeightConfig cfg{.cutoff = 2, .gamma = 1.0, .T = 50};
    ad::Tape tape(false);
    const double batched = spectral_loss(tape.constant(z0), tape.constant(zh), t, cfg).value()[0];
    double expected = 0.0;
    for (std::size_t b = 0; b < 2; ++b) {
        const std::size_t n = 2 * 8 * 3;
        Tensor x({2, 8, 3}), y({2, 8, 3});
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = z0[b * n + i];
            y[i] = zh[b * n + i];
        }
        expected += spectral_loss(x, y, t[b], cfg) / 2.0;
    }
    CHECK_THAT(batched, WithinRel(expected, 1e-12));

    const Tensor probs({3}, std::vector<double>{0.5, 0.9, 0.2});
    const Tensor labels({3}, std::vector<double>{1, 1, 0});
    const double mean_bce = (bce_distill_loss(0.5, 1) + bce_distill_loss(0.9, 1) + bce_distill_loss(0.2, 0)) / 3.0;
    CHECK_THAT(bce_distill_loss(tape.constant(probs), labels).value()[0], WithinRel(mean_bce, 1e-12));
}
