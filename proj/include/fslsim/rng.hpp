#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace fsl {

// Deterministic, platform-independent generator (xoshiro256**). All
// randomness in the library flows through named substreams derived from one
// root seed, so toggling one feature never perturbs another feature's draws.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  double uniform();                      // in [0, 1)
  double uniform(double lo, double hi);
  double normal();                       // standard normal
  size_t below(size_t n);                // unbiased draw from [0, n)

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  uint64_t s_[4];
};

// Stable seed for a named substream, optionally keyed by two integers.
uint64_t mix_seed(uint64_t root, std::string_view stream, uint64_t a = 0, uint64_t b = 0);
Rng substream(uint64_t root, std::string_view stream, uint64_t a = 0, uint64_t b = 0);

} // namespace fsl
