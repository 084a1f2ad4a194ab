#include "tidsit/rng.hpp"

#include <cmath>

namespace tidsit {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

RngStream RngStream::derive(std::uint64_t seed, std::string_view name,
                            std::uint64_t lane0, std::uint64_t lane1) {
  std::uint64_t k = splitmix64(seed);
  for (unsigned char c : name) {
    k = splitmix64(k ^ c);
  }
  k = splitmix64(k ^ lane0);
  k = splitmix64(k ^ lane1);
  RngStream s;
  s.key_ = k;
  return s;
}

std::uint64_t RngStream::next_u64() {
  return splitmix64(key_ ^ splitmix64(counter_++));
}

double RngStream::next_uniform() {
  // 53 high bits -> double in [0, 1)
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::next_uniform(double lo, double hi) {
  return lo + (hi - lo) * next_uniform();
}

double RngStream::next_normal() {
  double u1 = 1.0 - next_uniform();  // (0, 1], keeps log finite
  double u2 = next_uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

std::size_t RngStream::next_below(std::size_t n) {
  if (n <= 1) return 0;
  // multiply-shift; bias is negligible for the small n used here
  return static_cast<std::size_t>(
      (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

}  // namespace tidsit
