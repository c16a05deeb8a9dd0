#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace circuitcheck {

// Reproducible random stream keyed by (master_seed, stream_index). Bounded
// integers and shuffles are implemented here rather than via
// std::uniform_int_distribution so results do not depend on the standard
// library implementation.
class RngStream {
 public:
  RngStream(std::uint64_t master_seed, std::uint64_t stream_index);

  std::uint64_t master_seed() const { return master_seed_; }
  std::uint64_t stream_index() const { return stream_index_; }

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, bound); bound must be positive.
  std::uint64_t uniform_index(std::uint64_t bound);
  // Uniform in [0, 1) with 53 random bits.
  double uniform01();
  double normal();

  // Independent sub-stream; child(i) of the same parent is always the same stream.
  RngStream child(std::uint64_t index) const;

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_index(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::uint64_t master_seed_;
  std::uint64_t stream_index_;
  std::uint64_t key_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace circuitcheck
