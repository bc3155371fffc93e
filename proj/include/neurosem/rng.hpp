#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace neurosem {

/// Counter-based random stream. Every value is a pure function of
/// (key, counter), so a stream can be re-created anywhere from its key and
/// the output does not depend on the standard library's distributions.
class RngStream {
 public:
  explicit RngStream(std::uint64_t key) : key_(key) {}

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller (both outputs used).
  double normal();
  /// Normal(0, std) truncated to +-2 std by resampling.
  double truncated_normal(double std);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Child stream whose key mixes this stream's key with `name`.
  RngStream split(std::string_view name) const;
  RngStream split(std::uint64_t index) const;

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Root of all named streams for one run.
class Rng {
 public:
  explicit Rng(std::uint64_t master_seed) : seed_(master_seed) {}

  std::uint64_t seed() const { return seed_; }
  RngStream stream(std::string_view name) const;

 private:
  std::uint64_t seed_;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace neurosem
