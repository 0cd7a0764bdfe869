#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace cgm {

// Stream identifiers for substream derivation. One master seed drives the whole
// run; every stochastic site derives its own generator from (master, path) so
// perturbing one site never shifts another (e.g. resampling feature j leaves
// features < j untouched, rows can be generated on any worker).
enum : std::uint64_t {
    kStreamInit = 1,       // weight initialization
    kStreamShuffle = 2,    // per-epoch row shuffling
    kStreamPermute = 3,    // per-(epoch, example) feature permutation
    kStreamSubsample = 4,  // per-(epoch, example) prefix subsampling
    kStreamOrder = 5,      // per-row generation order
    kStreamSample = 6,     // per-(row, feature) sampling draws
    kStreamSplit = 7,      // train/test split
    kStreamBench = 8,      // benchmark-harness draws
};

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derives an independent generator from a master seed and a stream path,
// e.g. rng_stream(seed, {kStreamPermute, epoch, example}).
inline std::mt19937_64 rng_stream(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    std::uint64_t state = master ^ 0x5851f42d4c957f2dULL;
    splitmix64(state);
    for (std::uint64_t p : path) {
        state ^= splitmix64(state) + p;
        splitmix64(state);
    }
    return std::mt19937_64(splitmix64(state));
}

}  // namespace cgm
