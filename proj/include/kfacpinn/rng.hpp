#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace kfacpinn {

// Sub-stream tags. A run derives one independent generator per tag from the
// config seed, so e.g. evaluation points never share a stream with training.
enum class StreamTag : std::uint64_t {
  init = 0x1,
  interior = 0x2,
  boundary = 0x3,
  eval = 0x4,
  test = 0x5,
};

inline constexpr std::string_view kRngDescription =
    "mt19937_64; substream seed = splitmix64(seed ^ tag * 0x9E3779B97F4A7C15 ^ splitmix64(batch_index)); "
    "uniform = (x >> 11) * 2^-53";

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Deterministic generator with a portable uniform mapping; std::
/// distributions are avoided because their output is library-specific.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, StreamTag tag, std::uint64_t index = 0)
      : engine_(splitmix64(seed ^ (static_cast<std::uint64_t>(tag) * 0x9E3779B97F4A7C15ULL) ^
                           splitmix64(index))) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection keeps the mapping exactly uniform.
    const std::uint64_t limit = (~std::uint64_t{0} / n) * n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace kfacpinn
