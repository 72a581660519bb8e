#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ftf {

/// Counter-based seed splitting. Every random stream in a run is derived from
/// the single run seed plus a stream tag and an index, so adding a consumer
/// never shifts the draws of another.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                                 std::uint64_t index = 0) {
  // FNV-1a over the tag
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return splitmix64(splitmix64(base ^ h) + index);
}

using Rng = std::mt19937_64;

}  // namespace ftf
