#include "fdsm/rng.hpp"

namespace fdsm {

std::uint64_t fnv1a64(std::string_view text) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t substream_seed(std::uint64_t master, std::string_view name) noexcept {
    return mix64(master ^ fnv1a64(name));
}

std::uint64_t child_seed(std::uint64_t seed, std::uint64_t index) noexcept {
    return mix64(seed ^ mix64(index + 0x632be59bd9b4e019ULL));
}

Tensor normal_tensor(Shape shape, Rng& rng, double stddev) {
    Tensor out(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : out.data()) v = dist(rng);
    return out;
}

double uniform01(Rng& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

} // namespace fdsm
