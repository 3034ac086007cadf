#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace protofl {

using Rng = std::mt19937_64;

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Seed for a named stream keyed by (master seed, name, ids...). Streams
// derived from different keys are independent of each other and of the
// order in which they are created.
inline std::uint64_t stream_seed(std::uint64_t master, std::string_view name,
                                 std::initializer_list<std::uint64_t> ids = {}) {
  std::uint64_t h = mix64(master ^ fnv1a(name));
  for (auto id : ids) h = mix64(h ^ mix64(id + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_stream(std::uint64_t master, std::string_view name, std::initializer_list<std::uint64_t> ids = {}) {
  return Rng(stream_seed(master, name, ids));
}

}  // namespace protofl
