#pragma once

// Stream derivation for all randomness. Every random stream is an
// std::mt19937_64 seeded with
//   s = mix(mix(mix(mix(seed) ^ purpose) ^ path) ^ coord)
// where mix is the splitmix64 finalizer applied to (x + 0x9E3779B97F4A7C15).
// Streams for different (purpose, path, coord) are therefore reproducible and
// independent of the order in which they are consumed.

#include <cstdint>
#include <random>

namespace volterra::rng {

enum class Purpose : std::uint64_t {
    Noise = 1,
    InitialState = 2,
    Probe = 3,
    Regularity = 4,
    PhiBound = 5,
    Property = 6,
    ExactNoise = 7,
};

constexpr std::uint64_t mix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t stream_seed(std::uint64_t seed, Purpose purpose, std::uint64_t path = 0,
                                    std::uint64_t coord = 0) {
    std::uint64_t h = mix(seed);
    h = mix(h ^ static_cast<std::uint64_t>(purpose));
    h = mix(h ^ path);
    return mix(h ^ coord);
}

inline std::mt19937_64 stream(std::uint64_t seed, Purpose purpose, std::uint64_t path = 0,
                              std::uint64_t coord = 0) {
    return std::mt19937_64(stream_seed(seed, purpose, path, coord));
}

} // namespace volterra::rng
