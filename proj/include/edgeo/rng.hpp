#pragma once

#include <cstdint>
#include <string_view>

namespace edgeo {

/// Deterministic, platform-independent RNG (splitmix64). The standard
/// library's distributions are implementation-defined, so every random
/// draw in this project goes through this generator instead.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) with 53 bits of randomness.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi], inclusive. Lemire reduction, no rejection.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t n = static_cast<std::uint64_t>(hi - lo) + 1;
        const auto wide = static_cast<unsigned __int128>(next_u64()) * n;
        return lo + static_cast<std::int64_t>(wide >> 64);
    }

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::uint64_t state_;
};

/// Derive an independent seed stream from a base seed and a purpose label
/// (FNV-1a over the label, mixed with the base). Keeps data generation,
/// parameter init, and perturbation sampling decorrelated.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ base;
    for (char ch : label) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ULL;
    }
    h ^= base >> 32;
    h *= 0x100000001b3ULL;
    return h;
}

} // namespace edgeo
