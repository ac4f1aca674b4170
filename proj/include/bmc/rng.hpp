#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace bmc {

using Rng = std::mt19937_64;

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
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

/// Derives independent named substreams from one master seed. Adding a new
/// consumer name never changes the seeds handed to existing ones.
class SeedSplitter {
 public:
  explicit SeedSplitter(std::uint64_t master) : master_(master) {}

  std::uint64_t master() const noexcept { return master_; }

  std::uint64_t seed(std::string_view stream, std::uint64_t index = 0) const {
    return detail::splitmix64(detail::splitmix64(master_ ^ detail::fnv1a(stream)) + index);
  }

  Rng rng(std::string_view stream, std::uint64_t index = 0) const { return Rng(seed(stream, index)); }

  SeedSplitter child(std::string_view stream, std::uint64_t index = 0) const { return SeedSplitter(seed(stream, index)); }

 private:
  std::uint64_t master_;
};

}  // namespace bmc
