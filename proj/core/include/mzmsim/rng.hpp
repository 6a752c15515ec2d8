#pragma once

#include <cstdint>
#include <random>

namespace mzmsim::rng {

// splitmix64; used to decorrelate seeds of derived streams.
inline std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Independent engine for stream `index` derived from a master seed.
// Same (seed, index) always yields the same engine state.
inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t index) {
  return std::mt19937_64(mix(seed ^ mix(index + 1)));
}

}  // namespace mzmsim::rng
