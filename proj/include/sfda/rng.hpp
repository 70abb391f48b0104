#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace sfda::rng {

// splitmix64 finalizer.
constexpr std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Counter-based substream key: independent of the order in which items are
// generated.
constexpr std::uint64_t derive(std::uint64_t seed, std::uint64_t counter) {
  return mix(mix(seed) ^ mix(counter + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t derive(std::uint64_t seed, std::string_view tag) {
  return derive(seed, hash_tag(tag));
}

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t counter) {
  return std::mt19937_64(derive(seed, counter));
}

inline std::mt19937_64 stream(std::uint64_t seed, std::string_view tag) {
  return std::mt19937_64(derive(seed, tag));
}

}  // namespace sfda::rng
