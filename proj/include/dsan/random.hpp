#pragma once

// Deterministic randomness helpers. All stochastic behavior in the project
// flows through an explicitly seeded std::mt19937_64 and these mappings, so
// fixed seeds give bit-identical runs.

#include <cstdint>
#include <random>
#include <vector>

namespace dsan {

inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// uniform in [lo, hi)
inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

inline int uniform_int(std::mt19937_64& rng, int n) {
    return static_cast<int>(rng() % static_cast<uint64_t>(n));
}

// Fisher-Yates with an explicit index mapping; std::shuffle's draw sequence
// is implementation-defined, this one is not.
template <typename T>
inline void deterministic_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        const size_t j = static_cast<size_t>(rng() % i);
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace dsan
