#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace std2p {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Derives independent, named substreams from one root seed, so adding a new
// consumer never shifts the draws of an existing one.
class SeedSplitter {
 public:
  explicit SeedSplitter(std::uint64_t root) : root_(root) {}

  std::uint64_t seed(std::string_view name, std::uint64_t index = 0) const {
    return detail::splitmix64(detail::splitmix64(root_ ^ detail::fnv1a(name)) + index);
  }
  std::mt19937_64 stream(std::string_view name, std::uint64_t index = 0) const {
    return std::mt19937_64(seed(name, index));
  }
  SeedSplitter child(std::string_view name, std::uint64_t index = 0) const {
    return SeedSplitter(seed(name, index));
  }

  std::uint64_t root() const { return root_; }

 private:
  std::uint64_t root_;
};

}  // namespace std2p
