// rng.hpp: named deterministic sub-streams derived from one master seed.
//
// Every random object in the library (each simulated noise source, each
// learner's shuffling) owns a sub-stream addressed by a string label, so
// adding or removing one consumer never shifts the draws seen by another.
// The derivation is a fixed hash mix; identical (seed, label) pairs yield
// identical generators on every run of the same binary.
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace civet {

namespace detail {

// splitmix64 finalizer; decorrelates consecutive seeds and label hashes.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace detail

// Seed value for the sub-stream named `label` under `master`.
inline std::uint64_t substream_seed(std::uint64_t master, std::string_view label) {
    return detail::mix64(detail::mix64(master) ^ detail::fnv1a(label));
}

inline std::mt19937_64 substream(std::uint64_t master, std::string_view label) {
    return std::mt19937_64(substream_seed(master, label));
}

} // namespace civet
