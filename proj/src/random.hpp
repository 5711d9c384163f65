// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace streamsplat::detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Independent generator for a named sub-stream of a seed.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::initializer_list<std::int64_t> stream) {
    std::uint64_t h = splitmix64(seed);
    for (const auto s : stream) {
        h = splitmix64(h ^ static_cast<std::uint64_t>(s));
    }
    return std::mt19937_64(h);
}

} // namespace streamsplat::detail
