#pragma once

#include <cstdint>
#include <random>

namespace jemcal {

using Rng = std::mt19937_64;

/// Independent generator for a named purpose derived from a run seed.
/// Different `stream` values give statistically unrelated sequences.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x6a656d63u};
  return Rng(seq);
}

// Stream tags used across the library so that runs sharing a seed share
// their parameter initialisation and data order.
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kSgld = 3;
inline constexpr std::uint64_t kData = 4;
inline constexpr std::uint64_t kSplit = 5;
}  // namespace streams

}  // namespace jemcal
