#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <utility>

namespace lpie {

// Portable seeded generator.
//
// Engine: std::mt19937_64 (its output sequence is fixed by the C++ standard).
// The distribution mappings are implemented here because the std:: ones are
// implementation-defined:
//   uniform()  = (next_u64() >> 11) * 2^-53
//   below(n)   = rejection sampling on next_u64() against the largest multiple of n
//   normal()   = Box-Muller, u1 = 1 - uniform(), u2 = uniform(); the sine
//                branch is cached for the following call
// Sub-streams: derive(seed, {a, b, ...}) folds each id into the seed with the
// SplitMix64 finalizer, so (seed, epoch, sample) addresses an independent
// stream without sharing state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  static std::uint64_t splitmix(std::uint64_t x);
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) { return splitmix(seed ^ splitmix(stream)); }
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

  std::uint64_t next_u64() { return engine_(); }
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t below(std::uint64_t n);
  double normal();

  template <typename It>
  void shuffle(It first, It last) {
    const auto count = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = count; i > 1; --i) {
      using std::swap;
      swap(first[i - 1], first[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace lpie
