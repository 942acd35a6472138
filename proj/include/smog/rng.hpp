#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace smog {

using Rng = std::mt19937_64;

// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives an independent stream seed from a run seed and a tuple of
// coordinates (iteration, sample index, purpose tag, ...). Every random
// choice in a run is keyed this way, so results never depend on call order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
    std::uint64_t h = mix64(seed);
    for (std::uint64_t k : keys) h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
    return h;
}

// Purpose tags for derive_seed.
enum class Stream : std::uint64_t {
    augment = 1,
    shuffle = 2,
    kmeans = 3,
    random_select = 4,
    group_init = 5,
    probe = 6,
    entropy_baseline = 7,
    init = 8,
    data = 9,
};

inline std::uint64_t tag(Stream s) { return static_cast<std::uint64_t>(s); }

}  // namespace smog
