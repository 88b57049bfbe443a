#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace metaqa {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Seed for a named substream of `master`. Names are hashed in order, so
// ("sim", agent, qid) gives every (agent, example) pair its own stream.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::string_view> names) {
  std::uint64_t h = splitmix64(master);
  for (std::string_view n : names) h = splitmix64(fnv1a(n, h) ^ 0x5bd1e995ULL);
  return h;
}

}  // namespace metaqa
