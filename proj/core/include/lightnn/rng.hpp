#pragma once

#include <cstdint>

namespace lightnn {

// xoshiro256++ seeded through splitmix64. Self-contained so that streams are
// reproducible independent of the standard library's distribution
// implementations.
class Rng {
public:
  explicit Rng(uint64_t seed = 0) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t x = seed;
    for (auto& word : state_) {
      // splitmix64
      x += 0x9e3779b97f4a7c15ULL;
      uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      word = z ^ (z >> 31);
    }
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform float in [lo, hi).
  float uniform(float lo, float hi) {
    return lo + static_cast<float>(uniform()) * (hi - lo);
  }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return next_u64() % n; }

  bool bernoulli(double p) { return uniform() < p; }

  // Derives an independent stream; distinct tags give distinct streams.
  Rng fork(uint64_t tag) const {
    return Rng(state_[0] ^ (0x632be59bd9b4e019ULL * (tag + 1)));
  }

  // Named stream: the tag is FNV-1a hashed into the numeric fork.
  Rng fork(const char* tag) const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const char* p = tag; *p; ++p)
      h = (h ^ static_cast<uint8_t>(*p)) * 0x100000001b3ULL;
    return fork(h);
  }

  // Raw engine state, for checkpointing.
  void save_state(uint64_t out[4]) const {
    for (int i = 0; i < 4; ++i) out[i] = state_[i];
  }
  void restore_state(const uint64_t in[4]) {
    for (int i = 0; i < 4; ++i) state_[i] = in[i];
  }

private:
  static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }
  uint64_t state_[4];
};

}  // namespace lightnn
