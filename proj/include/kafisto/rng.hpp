#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace kafisto {

using Rng = std::mt19937_64;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Independent named stream derived from a master seed ("data", "shuffle",
/// "init", ...). Changing one consumer never perturbs another.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream) {
  return detail::splitmix64(master ^ detail::splitmix64(detail::fnv1a(stream)));
}

inline Rng make_stream(std::uint64_t master, std::string_view stream) {
  return Rng(derive_seed(master, stream));
}

}  // namespace kafisto
