#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace bertlab {

// All randomness in this project flows through splitmix64 so that every
// derived stream is bit-exact across platforms and compilers.
//
//   derived_seed = splitmix64(splitmix64(master_seed ^ stream_tag) ^ index)
//
// Deeper keys (document index, sequence index, position) extend the same
// chain one xor-and-mix level at a time.
inline constexpr uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline constexpr uint64_t derive_seed(uint64_t master, uint64_t stream_tag) {
  return splitmix64(splitmix64(master ^ stream_tag));
}

inline constexpr uint64_t derive_seed(uint64_t master, uint64_t stream_tag, uint64_t index) {
  return splitmix64(derive_seed(master, stream_tag) ^ index);
}

inline constexpr uint64_t derive_seed(uint64_t master, uint64_t stream_tag, uint64_t a,
                                      uint64_t b) {
  return splitmix64(derive_seed(master, stream_tag, a) ^ b);
}

// Stream tags. Values are arbitrary but frozen: changing any of them changes
// every dataset and checkpoint derived from a master seed.
namespace stream {
inline constexpr uint64_t kMlm = 0x01;
inline constexpr uint64_t kSr = 0x02;
inline constexpr uint64_t kFirstChar = 0x03;
inline constexpr uint64_t kAscii = 0x04;
inline constexpr uint64_t kRandomCorrupt = 0x05;
inline constexpr uint64_t kRandomLabel = 0x06;
inline constexpr uint64_t kModelInit = 0x07;
inline constexpr uint64_t kDropout = 0x08;
inline constexpr uint64_t kEpochShuffle = 0x09;
inline constexpr uint64_t kProbe = 0x0A;
inline constexpr uint64_t kFinetune = 0x0B;
inline constexpr uint64_t kSentLen = 0x0C;
inline constexpr uint64_t kBShift = 0x0D;
inline constexpr uint64_t kSynthCorpus = 0x0E;
}  // namespace stream

// Deterministic generator: a seeded splitmix64 counter. Not crypto, just a
// reproducible stream with platform-independent output.
class DetRng {
 public:
  explicit DetRng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Unbiased integer in [0, n) via rejection sampling.
  uint64_t below(uint64_t n) {
    if (n == 0) throw std::invalid_argument("DetRng::below: n must be > 0");
    const uint64_t rem = (UINT64_MAX % n) + 1;  // 2^64 mod n
    if (rem == n) return next_u64() % n;        // n divides 2^64
    const uint64_t limit = UINT64_MAX - rem;    // accept x <= limit
    uint64_t x = next_u64();
    while (x > limit) x = next_u64();
    return x % n;
  }

  // Uniform double in [0, 1) with 53 bits of mantissa.
  double real01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via the Marsaglia polar method (second value discarded to
  // keep the consumed-stream length a pure function of accepted draws).
  double normal() {
    for (;;) {
      const double u = 2.0 * real01() - 1.0;
      const double v = 2.0 * real01() - 1.0;
      const double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }

  // Normal(0, sigma^2) resampled until within +-2 sigma.
  double truncated_normal(double sigma) {
    for (;;) {
      const double z = normal();
      if (std::abs(z) <= 2.0) return z * sigma;
    }
  }

  // Fisher-Yates shuffle.
  template <typename Container>
  void shuffle(Container& c) {
    const size_t n = c.size();
    if (n < 2) return;
    for (size_t i = n - 1; i > 0; --i) {
      const size_t j = static_cast<size_t>(below(i + 1));
      using std::swap;
      swap(c[i], c[j]);
    }
  }

 private:
  uint64_t state_;
};

}  // namespace bertlab
