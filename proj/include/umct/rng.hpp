#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace umct {

// Seedable, splittable generator. A derived stream depends only on the
// parent's seed and the tag, never on how many values the parent has drawn,
// so every consumer (a dropout site, MC pass k, the patch sampler, weight
// init) gets the same numbers regardless of evaluation order.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0);

  RngStream derive(std::uint64_t tag) const;
  RngStream derive(std::string_view tag) const;
  template <typename... Tags>
  RngStream derive(std::string_view tag, Tags... rest) const {
    return derive(tag).derive(rest...);
  }
  template <typename... Tags>
  RngStream derive(std::uint64_t tag, Tags... rest) const {
    return derive(tag).derive(rest...);
  }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller.
  double normal();

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t hash_string(std::string_view s);

}  // namespace umct
