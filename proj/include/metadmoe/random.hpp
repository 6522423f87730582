#ifndef METADMOE_RANDOM_HPP
#define METADMOE_RANDOM_HPP

#include <cstdint>
#include <random>

namespace metadmoe {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; derives independent stream seeds from a root seed.
inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Named streams so the phases of one run draw from unrelated generators.
enum class SeedStream : std::uint64_t { data = 1, experts = 2, student = 3, aggregator = 4, meta = 5, eval = 6, privacy = 7 };

inline std::uint64_t phase_seed(std::uint64_t root, SeedStream stream) {
  return split_seed(root, static_cast<std::uint64_t>(stream));
}

}  // namespace metadmoe

#endif  // METADMOE_RANDOM_HPP
