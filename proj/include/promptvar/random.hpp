#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <type_traits>
#include <string_view>
#include <utility>
#include <vector>

namespace promptvar {

// splitmix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_tag(std::string_view tag) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {
template <typename T>
constexpr std::uint64_t seed_part(const T& v) noexcept {
  if constexpr (std::is_convertible_v<const T&, std::string_view>) {
    return hash_tag(std::string_view(v));
  } else {
    return static_cast<std::uint64_t>(v);
  }
}
}  // namespace detail

// Derives a child seed from a parent seed and any sequence of integer or
// string tags. Equal inputs always give equal outputs.
template <typename... Parts>
std::uint64_t derive_seed(std::uint64_t seed, const Parts&... parts) noexcept {
  ((seed = mix64(seed ^ mix64(detail::seed_part(parts) + 0x632be59bd9b4e019ULL))), ...);
  return seed;
}

// Seeded generator with platform-independent distributions. The standard
// distribution classes are implementation-defined, so they are avoided to keep
// outputs byte-identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

  std::uint64_t next() { return engine_(); }

  // Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound) {
    // Rejection sampling on the top of the range (unbiased).
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % bound;
  }

  // Uniform double in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) {
    if (p <= 0.0) return false;
    if (p >= 1.0) return true;
    return uniform() < p;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace promptvar
