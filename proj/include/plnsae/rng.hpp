#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace plnsae {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; bijective on 64-bit words.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/**
 * Derive an independent stream seed from a master seed and a path of
 * stream indices, e.g. derive_seed(master, {replicate, purpose}).
 *
 * Each path element is absorbed through a SplitMix64 round, so
 * distinct paths give unrelated seeds and the mapping is stable
 * across platforms.
 */
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = splitmix64(master);
  for (std::uint64_t p : path) s = splitmix64(s ^ splitmix64(p + 0x632BE59BD9B4E019ULL));
  return s;
}

inline Rng make_rng(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  return Rng(derive_seed(master, path));
}

/// Stream purposes used when deriving per-replicate seeds.
namespace stream {
inline constexpr std::uint64_t domain_effects = 0;
inline constexpr std::uint64_t population = 1;
inline constexpr std::uint64_t sample = 2;
inline constexpr std::uint64_t sampler = 3;
}  // namespace stream

}  // namespace plnsae
