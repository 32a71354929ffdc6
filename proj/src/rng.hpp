#pragma once

#include <cstdint>
#include <random>

namespace jfbctrl {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Independent generator for draw `index` of stream `seed`; the draw order is
// reproducible no matter how work is scheduled.
inline std::mt19937_64 indexed_rng(std::uint64_t seed, std::uint64_t index) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(index)));
}

}  // namespace jfbctrl
