#ifndef PEG_SEEDING_HPP_
#define PEG_SEEDING_HPP_

#include <cstdint>

namespace peg {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Independent seed for (base, a, b), e.g. (run seed, episode, stream).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(splitmix64(base) ^ a) ^ (b * 0xD1B54A32D192ED03ULL));
}

}  // namespace peg

#endif  // PEG_SEEDING_HPP_
