#pragma once

#include "fdsm/tensor.hpp"

#include <cstdint>
#include <random>
#include <string_view>

namespace fdsm {

using Rng = std::mt19937_64;

/// FNV-1a over the raw bytes of `text`.
std::uint64_t fnv1a64(std::string_view text) noexcept;

/// SplitMix64 finalizer, used to decorrelate derived seeds.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Seed of a named sub-stream of `master` ("data", "init", "training-noise", ...).
std::uint64_t substream_seed(std::uint64_t master, std::string_view name) noexcept;
/// Seed of the `index`-th child of `seed`.
std::uint64_t child_seed(std::uint64_t seed, std::uint64_t index) noexcept;

Tensor normal_tensor(Shape shape, Rng& rng, double stddev = 1.0);
double uniform01(Rng& rng);

} // namespace fdsm
