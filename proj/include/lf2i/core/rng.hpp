#pragma once

#include <cstdint>
#include <random>

namespace lf2i {

using Engine = std::mt19937_64;

/// SplitMix64 finalizer; used to decorrelate (master, stream) seed pairs.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed for stream `stream` under master seed `master`. Every parallel unit of
/// work gets its own stream id, so results do not depend on scheduling.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept {
  return splitmix64(splitmix64(master) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

inline Engine make_engine(std::uint64_t master, std::uint64_t stream = 0) {
  return Engine(derive_seed(master, stream));
}

// Stream-id namespaces so independent stages never share draws.
namespace streams {
inline constexpr std::uint64_t kLabeled = 1ULL << 40;
inline constexpr std::uint64_t kCalibration = 2ULL << 40;
inline constexpr std::uint64_t kPValue = 3ULL << 40;
inline constexpr std::uint64_t kCoverage = 4ULL << 40;
inline constexpr std::uint64_t kMonteCarlo = 5ULL << 40;
inline constexpr std::uint64_t kObserved = 6ULL << 40;
inline constexpr std::uint64_t kLearner = 7ULL << 40;
inline constexpr std::uint64_t kLoss = 8ULL << 40;
}  // namespace streams

}  // namespace lf2i
