#pragma once

#include <cstdint>
#include <random>

namespace c2ed2 {

// splitmix64 finalizer, the usual published constants
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// reproducible per-replication stream: the draw sequence depends only on
// (seed, index), never on thread scheduling
inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t index) {
    const std::uint64_t a = mix64(seed);
    const std::uint64_t b = mix64(a ^ mix64(index + 0xD1B54A32D192ED03ull));
    return std::mt19937_64(b);
}

} // namespace c2ed2
