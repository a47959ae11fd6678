// Seeded randomness helpers. Everything randomized in the project flows
// through these so that a fixed seed reproduces byte-identical artifacts
// regardless of standard-library distribution internals.

#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace deficit {

using Rng = std::mt19937_64;

/// Uniform double in [0, 1).
inline double rand_unit(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double rand_range(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * rand_unit(rng);
}

/// Uniform index in [0, n). Modulo bias is below 2^-53 for any n this
/// project uses.
inline std::size_t rand_index(Rng& rng, std::size_t n) {
    return static_cast<std::size_t>(rng() % n);
}

inline bool rand_bernoulli(Rng& rng, double p) {
    return rand_unit(rng) < p;
}

/// In-place Fisher-Yates shuffle driven by rand_index.
template <typename T>
void shuffle(Rng& rng, std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = rand_index(rng, i);
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace deficit
