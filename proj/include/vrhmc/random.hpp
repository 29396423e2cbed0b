#pragma once

#include <cstdint>
#include <random>

namespace vrhmc {

/// SplitMix64 finalizer; used to derive decorrelated seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed for stream `stream` of chain `chain` under master seed `seed`.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t chain,
                                    std::uint64_t stream = 0) noexcept {
  return mix64(mix64(mix64(seed) ^ chain) ^ (stream * 0xd1b54a32d192ed03ULL));
}

/// Named stream ids; each chain owns one generator per purpose so that
/// batch selection never perturbs the dynamics noise and vice versa.
enum class Stream : std::uint64_t { Noise = 1, Batch = 2, Data = 3 };

using Engine = std::mt19937_64;

inline Engine make_engine(std::uint64_t seed, std::uint64_t chain, Stream s) {
  return Engine(derive_seed(seed, chain, static_cast<std::uint64_t>(s)));
}

}  // namespace vrhmc
