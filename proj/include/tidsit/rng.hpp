#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace tidsit {

/// Counter-based random stream. A stream is fully determined by
/// (seed, name, lane indices), so any draw is reproducible regardless of
/// what other streams consumed before it. Copying a stream snapshots its
/// counter.
class RngStream {
 public:
  RngStream() = default;

  static RngStream derive(std::uint64_t seed, std::string_view name,
                          std::uint64_t lane0 = 0, std::uint64_t lane1 = 0);

  std::uint64_t next_u64();
  double next_uniform();                      // [0, 1)
  double next_uniform(double lo, double hi);  // [lo, hi)
  double next_normal();                       // standard normal, Box-Muller
  std::size_t next_below(std::size_t n);      // uniform in [0, n)

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[next_below(i)]);
    }
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace tidsit
