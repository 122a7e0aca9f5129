#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace bnadapt {

std::uint64_t fnv1a64(std::string_view s);
std::uint64_t splitmix64_next(std::uint64_t& state);

// xoshiro256++ behind hand-rolled distributions. std:: distributions are
// implementation-defined, so every random draw in the engine goes through
// this class to keep runs bit-reproducible.
//
// Named streams derive independent generators from one root seed; each
// consumer (init, shuffle, per-sample synthesis) owns its own stream so the
// draw counts of one stage cannot shift another.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  static Rng stream(std::uint64_t seed, std::string_view name) {
    return Rng(seed ^ fnv1a64(name));
  }

  std::uint64_t next_u64();

  // [0, 1), 53-bit resolution
  double uniform();
  double uniform(double lo, double hi);

  // standard normal, Box-Muller
  double normal();

  // [0, n), unbiased via rejection
  std::uint64_t below(std::uint64_t n);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::uint64_t s_[4];
};

}  // namespace bnadapt
