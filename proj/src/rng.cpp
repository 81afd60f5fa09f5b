#include "fslsim/rng.hpp"

#include <cmath>

#include "fslsim/error.hpp"

namespace fsl {

namespace {

uint64_t splitmix64(uint64_t& x) {
  uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr double kTwoPi = 6.283185307179586476925286766559;

} // namespace

Rng::Rng(uint64_t seed) {
  uint64_t x = seed;
  for (auto& s : s_) s = splitmix64(x);
}

uint64_t Rng::next_u64() {
  uint64_t result = rotl(s_[1] * 5, 7) * 9;
  uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  // Box-Muller; u1 is kept strictly positive so the log stays finite.
  double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

size_t Rng::below(size_t n) {
  if (n == 0) throw UsageError("Rng::below: n must be positive");
  uint64_t bound = n;
  uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  uint64_t r;
  do {
    r = next_u64();
  } while (r >= limit);
  return static_cast<size_t>(r % bound);
}

uint64_t mix_seed(uint64_t root, std::string_view stream, uint64_t a, uint64_t b) {
  uint64_t x = root;
  uint64_t s = splitmix64(x);
  x ^= fnv1a(stream);
  s ^= splitmix64(x);
  x ^= a * 0x9e3779b97f4a7c15ULL + 0x165667b19e3779f9ULL;
  s ^= splitmix64(x);
  x ^= b * 0xd1b54a32d192ed03ULL + 0x2545f4914f6cdd1dULL;
  s ^= splitmix64(x);
  return s;
}

Rng substream(uint64_t root, std::string_view stream, uint64_t a, uint64_t b) {
  return Rng(mix_seed(root, stream, a, b));
}

} // namespace fsl
