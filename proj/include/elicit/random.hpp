#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "elicit/errors.hpp"

namespace elicit {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic seed for a named sub-stream (replication, iteration, ...).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ (b * 0x2545f4914f6cdd1dULL));
  return splitmix64(h ^ (c * 0x9e3779b97f4a7c15ULL));
}

/// Counter-based uniform in [0, 1): the same (seed, stream, counter) always
/// gives the same draw regardless of evaluation order.
inline double counter_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  const std::uint64_t bits = splitmix64(splitmix64(seed ^ splitmix64(stream)) + counter);
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// k distinct indices drawn uniformly from [0, n), in draw order.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  if (k > n) throw DomainError("cannot sample " + std::to_string(k) + " of " + std::to_string(n) + " items");
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace elicit
