#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace ergwalk {

std::uint64_t splitmix64(std::uint64_t x);

// Counter-derived seed: a pure function of (master, stream, index), so every
// replica or site gets its own reproducible stream regardless of scheduling.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index = 0);

// Stream tags used with derive_seed.
namespace stream {
inline constexpr std::uint64_t environment = 0x656e76;     // fresh environment per replica
inline constexpr std::uint64_t walk = 0x77616c6b;          // particle randomness
inline constexpr std::uint64_t site = 0x73697465;          // per-site environment draws
inline constexpr std::uint64_t h_grid = 0x68677269;        // per-h replicas
inline constexpr std::uint64_t env_draw = 0x64726177;      // environment draws for exact formulas
}  // namespace stream

// Uniform doubles are built from the top 53 bits so results do not depend on
// the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // In [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // In (0, 1].
    double uniform_open0() { return 1.0 - uniform(); }

    double exponential(double rate) { return -std::log(uniform_open0()) / rate; }

private:
    std::mt19937_64 engine_;
};

// Stateless uniform in [0,1) keyed by (seed, counter).
inline double counter_uniform(std::uint64_t seed, std::uint64_t counter) {
    return static_cast<double>(splitmix64(seed ^ splitmix64(counter)) >> 11) * 0x1.0p-53;
}

}  // namespace ergwalk
