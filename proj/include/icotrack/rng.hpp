#pragma once

#include <cstdint>
#include <random>

namespace icotrack {

// splitmix64; used to derive independent substream seeds so that every
// stochastic choice is a pure function of (master seed, indices).
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t master, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
  uint64_t s = splitmix64(master ^ 0x6a09e667f3bcc908ULL);
  s = splitmix64(s ^ a);
  s = splitmix64(s ^ (b + 0x510e527fade682d1ULL));
  s = splitmix64(s ^ (c + 0x9b05688c2b3e6c1fULL));
  return s;
}

inline std::mt19937_64 make_rng(uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace icotrack
