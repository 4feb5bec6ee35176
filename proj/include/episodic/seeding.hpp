#pragma once

#include <cstdint>
#include <random>

namespace episodic {

/// Named random streams expanded from one master seed. Streams never share
/// state, so e.g. changing the exploration policy leaves environment
/// initialisation untouched.
enum class SeedStream : std::uint64_t {
  kEnvironment = 1,
  kAgentInit = 2,
  kPolicy = 3,
  kEvaluation = 4,
  kReplay = 5,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based derivation: seed for item `counter` of `stream`.
constexpr std::uint64_t derive_seed(std::uint64_t master, SeedStream stream, std::uint64_t counter = 0) {
  const std::uint64_t base = splitmix64(splitmix64(master) ^ static_cast<std::uint64_t>(stream));
  return splitmix64(base ^ splitmix64(counter));
}

/// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace episodic
