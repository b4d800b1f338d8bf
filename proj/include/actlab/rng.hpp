#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace actlab::rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Purpose tags for sub-stream derivation. Folding tags into the master seed
// keeps independent consumers (init, shuffling, attack inits, ...) on disjoint
// streams, so adding one consumer never shifts the draws of another.
enum Tag : std::uint64_t {
  kInitRobust = 0x11,
  kInitNatural = 0x12,
  kShuffle = 0x21,
  kAttack = 0x31,
  kAttackInit = 0x32,
  kRestart = 0x33,
  kAugment = 0x41,
  kLabels = 0x51,
  kData = 0x61,
  kProbe = 0x71,
  kEval = 0x81,
};

inline std::uint64_t derive(std::uint64_t seed) { return splitmix64(seed); }

template <class... Rest>
inline std::uint64_t derive(std::uint64_t seed, std::uint64_t tag, Rest... rest) {
  return derive(splitmix64(seed ^ splitmix64(tag)), rest...);
}

/// Counter-based splitmix64 stream. Platform-independent and O(1) state, so
/// per-example sub-streams are cheap and serial/parallel schedules agree.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_++); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n) {
    return static_cast<std::size_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  bool coin() { return (next_u64() & 1) != 0; }

  /// Standard normal via Box-Muller (spare cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Fisher-Yates with a fixed draw order.
template <class T>
inline void shuffle(std::vector<T>& v, Stream& s) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = s.below(i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace actlab::rng
