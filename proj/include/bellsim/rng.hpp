#pragma once

#include <cstdint>
#include <random>

namespace bellsim {

// splitmix64 step (Steele et al.), used only to spread one master seed into
// well-separated per-stream seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream_id) {
  std::uint64_t s = master ^ (0xa0761d6478bd642fULL * (stream_id + 1));
  return splitmix64(s);
}

// Independent seeds for the roles of a run, all derived from one master seed.
// lambda drives the source's hidden-variable draws, alice/bob drive the
// stations' switch draws, reserved is kept for forward compatibility.
struct SeedPack {
  std::uint64_t lambda = 0;
  std::uint64_t alice = 0;
  std::uint64_t bob = 0;
  std::uint64_t reserved = 0;

  static SeedPack derive(std::uint64_t master) {
    std::uint64_t s = master;
    SeedPack p;
    p.lambda = splitmix64(s);
    p.alice = splitmix64(s);
    p.bob = splitmix64(s);
    p.reserved = splitmix64(s);
    return p;
  }

  bool operator==(const SeedPack&) const = default;
};

// Deterministic draw stream. mt19937_64 output is specified bit for bit by the
// standard; the transforms below are our own so results do not depend on the
// standard library's distribution implementations.
class StreamRng {
 public:
  explicit StreamRng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0,1) with 53 random bits, so 0 is possible and 1 is not.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform01();
  }

  // Unbiased integer in [0,n) by rejection.
  std::uint64_t uniform_below(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Exact at p = 0 (never true) and p = 1 (always true), since uniform01()
  // takes values in [0,1).
  bool bernoulli(double p) { return uniform01() < p; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace bellsim
