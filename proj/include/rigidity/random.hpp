#pragma once

// Seeded random streams and a deterministic parallel loop.
//
// Stream derivation: stream i of master seed s is an mt19937_64 seeded with
//   splitmix64(s XOR (0x9E3779B97F4A7C15 * (i + 1)))
// so orbit/rep i always sees the same numbers no matter how work is split
// across threads.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <thread>
#include <vector>

#include "rigidity/errors.hpp"

namespace rigidity {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(master ^ (0x9E3779B97F4A7C15ULL * (stream + 1)));
}

/// mt19937_64 with platform-independent conversions (the std distributions
/// are implementation-defined, which would break byte-identical reports).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t master, std::uint64_t stream) : engine_(derive_seed(master, stream)) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() {
    // Box-Muller; u1 in (0, 1].
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Index drawn from a cumulative distribution (last entry treated as 1).
  std::size_t pick(std::span<const double> cumulative) {
    const double u = uniform();
    for (std::size_t i = 0; i + 1 < cumulative.size(); ++i)
      if (u < cumulative[i]) return i;
    return cumulative.size() - 1;
  }

  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

/// Validates a probability vector (positive entries summing to 1 within 1e-12)
/// and returns its running sums.
inline std::vector<double> cumulative_probs(std::span<const double> probs) {
  require(!probs.empty(), ErrorKind::InvalidArgument, "empty probability vector");
  std::vector<double> cdf(probs.size());
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    require(std::isfinite(probs[i]) && probs[i] > 0.0, ErrorKind::InvalidArgument,
            "probabilities must be positive");
    total += probs[i];
    cdf[i] = total;
  }
  require(std::abs(total - 1.0) <= 1e-12, ErrorKind::InvalidArgument,
          "probabilities must sum to 1");
  cdf.back() = 1.0;
  return cdf;
}

/// Runs fn(i) for i in [0, n). Each index must write only its own output
/// slot; callers reduce afterwards in index order.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  const std::size_t workers = std::min(hw, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
}

}  // namespace rigidity
