#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace tomoguard::rng {

// splitmix64 step; used only for seed derivation, never for sampling.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t hash_tag(std::string_view tag) {
    // FNV-1a, stable across platforms.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Hierarchical seed split: every component derives its stream as
// derive(parent_seed, "component", index...). Collisions between distinct
// paths are as unlikely as splitmix64 collisions.
inline std::uint64_t derive(std::uint64_t seed, std::string_view tag) {
    std::uint64_t s = seed ^ hash_tag(tag);
    return splitmix64(s);
}

inline std::uint64_t derive(std::uint64_t seed, std::string_view tag, std::uint64_t index) {
    std::uint64_t s = seed ^ hash_tag(tag);
    s = splitmix64(s);
    s ^= 0x9e3779b97f4a7c15ULL * (index + 1);
    return splitmix64(s);
}

inline std::uint64_t derive(std::uint64_t seed, std::string_view tag, std::uint64_t i,
                            std::uint64_t j) {
    return derive(derive(seed, tag, i), tag, j);
}

inline std::mt19937_64 engine(std::uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace tomoguard::rng
