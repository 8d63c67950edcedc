#pragma once

#include <array>
#include <cstdint>

namespace noisebench {

// Counter-based random stream (Philox 4x32-10, Salmon et al. SC'11).
//
// The value sequence is a pure function of (seed, stream_index, draw index):
// key = seed, counter = (draw, draw_hi, stream_lo, stream_hi). Streams with
// distinct indices are independent, there is no shared state, and generation
// order across threads cannot change the values. One stream per stimulus is
// the convention everywhere in this toolkit.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t stream_index);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_index() const { return stream_; }

  std::uint32_t next_u32();
  std::uint64_t next_u64();

  // Uniform in [0,1), 24 random mantissa bits (values are multiples of 2^-24).
  float next_float();
  // Uniform in [0,1) with 53 bits.
  double next_double();
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller; caches the second variate.
  double next_gaussian();
  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n);

  // Raw Philox block for tests: out = philox(counter, key).
  static std::array<std::uint32_t, 4> block(const std::array<std::uint32_t, 4>& counter,
                                            const std::array<std::uint32_t, 2>& key);

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t draw_ = 0;  // block counter
  std::array<std::uint32_t, 4> buf_{};
  int buf_pos_ = 4;
  bool have_gauss_ = false;
  double cached_gauss_ = 0.0;
};

}  // namespace noisebench
