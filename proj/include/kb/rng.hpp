#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace kb {

// 64-bit FNV-1a; stable stream ids from component names, so adding a new
// consumer never perturbs existing streams.
constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// xoshiro256++ seeded from a (root, stream, chunk) triple. A fixed triple
// yields a fixed sample sequence independent of scheduling or thread count.
class Rng {
 public:
  explicit Rng(std::uint64_t root, std::uint64_t stream = 0,
               std::uint64_t chunk = 0) {
    std::uint64_t x = splitmix64(root ^ 0x6a09e667f3bcc909ull);
    x = splitmix64(x ^ stream);
    x = splitmix64(x ^ splitmix64(chunk ^ 0xbb67ae8584caa73bull));
    for (auto& w : state_) {
      x = splitmix64(x);
      w = x;
    }
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // uniform in [0, 1) with 53 random bits
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  // Box-Muller; the spare is cached inside this generator, so per-stream
  // sequences stay reproducible.
  double normal();

  std::vector<double> uniform_in_box(const std::vector<double>& lower,
                                     const std::vector<double>& upper);

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4] = {};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace kb
