#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace cafe {

// All randomness in the project flows from one root seed through the helpers
// below. Everything is counter/hash based, so results do not depend on the
// platform's <random> distributions and are reproducible byte-for-byte.

constexpr std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Child stream for a named purpose ("validation-split", "gap-shuffle", ...).
constexpr std::uint64_t child_seed(std::uint64_t root, std::string_view tag) {
    return splitmix64(root ^ fnv1a64(tag));
}

constexpr std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    return splitmix64(a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2)));
}

// Tiny counter-based engine.
struct SplitMix {
    std::uint64_t state;
    explicit SplitMix(std::uint64_t seed) : state(seed) {}
    std::uint64_t next() {
        state += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }
    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    // Uniform integer in [0, n), n > 0. Modulo bias is irrelevant here.
    std::uint64_t below(std::uint64_t n) { return next() % n; }
};

// Exponential(1) draw from a hashed key; strictly positive.
inline double exp_draw(std::uint64_t key) {
    double u = static_cast<double>(splitmix64(key) >> 11) * 0x1.0p-53;
    return -std::log1p(-u) + 1e-12;
}

// Deterministic standard normal (Box-Muller on two hashed uniforms).
inline double gauss_draw(std::uint64_t key) {
    double u1 = (static_cast<double>(splitmix64(key) >> 11) + 0.5) * 0x1.0p-53;
    double u2 = static_cast<double>(splitmix64(key ^ 0xabcdef1234567890ull) >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

// In-place Fisher-Yates with the portable engine above.
template <typename T>
void deterministic_shuffle(std::vector<T>& v, std::uint64_t seed) {
    SplitMix rng(seed);
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace cafe
