#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "dml/math.hpp"

namespace dml {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Stream splitting: substream `id` of master seed `seed` is two splitmix64
/// rounds over their combination. Parallel consumers draw from disjoint
/// streams, so results do not depend on worker count.
inline std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t id) {
    std::uint64_t s = seed ^ (0x632BE59BD9B4E019ull * (id + 1));
    const std::uint64_t a = splitmix64(s);
    return a ^ splitmix64(s);
}

inline std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

/// Per-phase seed derivation: hashing the phase name keeps e.g. test-set
/// generation independent of training randomness under one master seed.
inline std::uint64_t phase_seed(std::uint64_t master, std::string_view phase) {
    return substream_seed(master, fnv1a64(phase));
}

/// Seeded generator with uniforms built from raw bits and normals through the
/// inverse CDF, so streams are reproducible bit-for-bit across platforms.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    /// Uniform on (0,1), both endpoints excluded.
    double uniform() {
        return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal() { return norm_inv(uniform()); }

    std::uint64_t raw() { return gen_(); }

  private:
    std::mt19937_64 gen_;
};

} // namespace dml
