#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace adpmac {

/// SplitMix64 finalizer. Used to derive independent seeds from structured keys.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Folds a master seed and a list of integer keys into one 64-bit seed.
/// Order-sensitive: {1, 2} and {2, 1} give different seeds.
constexpr std::uint64_t derive_seed(std::uint64_t master,
                                    std::initializer_list<std::uint64_t> keys) noexcept {
  std::uint64_t h = mix64(master);
  for (auto k : keys) h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

/// What a random substream is used for. Each (node, purpose) pair gets its own
/// stream, so adding a node or a consumer never perturbs another stream.
enum class StreamPurpose : std::uint64_t {
  Arrivals = 1,
  Polling = 2,
  Backoff = 3,
  Phase = 4,
};

/// Seeded random stream with platform-stable draws.
///
/// std::mt19937_64 output is fixed by the standard; the std:: distributions
/// are not, so the conversions below are done by hand.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  /// Substream for one (node, purpose) pair under a master seed.
  static RandomStream substream(std::uint64_t master, std::uint64_t node,
                                StreamPurpose purpose) {
    return RandomStream(derive_seed(master, {node, static_cast<std::uint64_t>(purpose)}));
  }

  /// Uniform on the open interval (0, 1).
  double uniform_open() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Exponential with the given mean; always strictly positive.
  double exponential(double mean) { return -mean * std::log(uniform_open()); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_below(std::uint64_t n) {
    // Rejection sampling keeps the draw unbiased for any n.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace adpmac
