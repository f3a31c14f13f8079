#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace servo {

using RngEngine = std::mt19937_64;

// splitmix64 finalizer, used to derive independent-looking substream seeds.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t seed_combine(uint64_t seed, uint64_t label) {
    // order-dependent: combine(a, b) != combine(b, a)
    return mix64(seed * 6364136223846793005ULL + label + 1442695040888963407ULL);
}

// Deterministic substream derivation: the same (seed, path) always yields the
// same engine state, independent of how many draws other streams consumed.
inline RngEngine substream(uint64_t seed, std::initializer_list<uint64_t> path) {
    uint64_t s = mix64(seed);
    for (uint64_t p : path) s = seed_combine(s, p);
    return RngEngine(s);
}

// Stream labels used across the workbench so that seed derivations never collide.
namespace stream {
constexpr uint64_t kScene = 1;
constexpr uint64_t kPoses = 2;
constexpr uint64_t kProvider = 3;
constexpr uint64_t kAugment = 4;
constexpr uint64_t kRollout = 5;
constexpr uint64_t kInit = 6;
constexpr uint64_t kShuffle = 7;
}  // namespace stream

inline double uniform(RngEngine& rng, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(rng);
}

inline int uniform_int(RngEngine& rng, int lo, int hi) {  // inclusive bounds
    std::uniform_int_distribution<int> d(lo, hi);
    return d(rng);
}

}  // namespace servo
