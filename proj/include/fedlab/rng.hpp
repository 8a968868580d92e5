#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedlab {

// splitmix64 finalizer; decorrelates nearby keys.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Deterministic stream derivation: one engine per (seed, key...) tuple.
/// Streams keyed by stable ids (client id, round, step) are independent of
/// scheduling order, which is what makes concurrent client updates safe.
inline std::mt19937_64 make_stream(std::uint64_t seed,
                                   std::initializer_list<std::uint64_t> key) {
    std::uint64_t state = mix64(seed);
    for (std::uint64_t k : key) state = mix64(state ^ mix64(k));
    return std::mt19937_64(state);
}

inline std::mt19937_64 make_stream(std::uint64_t seed) { return make_stream(seed, {}); }

} // namespace fedlab
