#pragma once

#include <cstdint>
#include <random>

namespace mtlmm {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent deterministic stream derived from (seed, stream). Streams let
/// one draw (masks, designs, noise, shuffles) stay reproducible regardless
/// of how many values the others consume.
inline std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream) {
    return std::mt19937_64(splitmix64(splitmix64(seed) ^ splitmix64(stream + 1)));
}

}  // namespace mtlmm
