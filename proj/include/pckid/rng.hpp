#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

namespace pckid::rng {

using Engine = std::mt19937_64;

/// SplitMix64 finalizer. Stateless; used to turn (base_seed, stream indices)
/// into well-separated derived seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives an independent stream seed from a base seed and a list of indices.
/// Any two distinct index lists give unrelated streams, so work items (ensemble
/// members, k-means restarts, experiment runs) can be computed in any order.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts) {
    std::uint64_t state = splitmix64(base);
    for (std::uint64_t p : parts) {
        state = splitmix64(state ^ splitmix64(p));
    }
    return state;
}

inline Engine make_engine(std::uint64_t seed) { return Engine(seed); }

/// Uniform double in [0, 1) with 53 random bits. Implemented by hand so the
/// stream does not depend on the standard library's distribution internals.
inline double uniform01(Engine& eng) {
    return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

/// Uniform index in [0, n). Rejection sampling, unbiased.
inline std::size_t uniform_index(Engine& eng, std::size_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
    const std::uint64_t span = std::numeric_limits<std::uint64_t>::max();
    const std::uint64_t limit = span - span % n;
    std::uint64_t draw;
    do {
        draw = eng();
    } while (draw >= limit);
    return static_cast<std::size_t>(draw % n);
}

/// Standard normal via Box-Muller (one value per call, portable).
inline double normal(Engine& eng, double mean = 0.0, double stddev = 1.0) {
    const double u1 = (static_cast<double>(eng() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform01(eng);
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    return mean + stddev * z;
}

/// Draws k distinct indices from [0, n) by partial Fisher-Yates.
inline std::vector<std::size_t> sample_without_replacement(Engine& eng, std::size_t n, std::size_t k) {
    if (k > n) throw std::invalid_argument("sample_without_replacement: k exceeds n");
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + uniform_index(eng, n - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

}  // namespace pckid::rng
