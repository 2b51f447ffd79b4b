#pragma once

// Counter-based random numbers. Every draw is a pure function of
// (seed, counter), so any entry of any stream can be regenerated
// independently of the order in which entries are requested.

#include <array>
#include <cstdint>

namespace ntk {

/// Philox4x32-10 block function.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Stream identifiers keep draws for different purposes disjoint.
enum class Stream : std::uint32_t {
  weight = 1,
  bias = 2,
  data_input = 16,
  data_noise = 17,
  data_split = 18,
  experiment = 32,
};

/// Counter-based generator. A draw is addressed by (stream, tag, i, j):
/// for parameters `tag` is the layer and (i, j) the matrix position, so
/// widening a layer leaves the existing entries untouched.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  /// Uniform in the open interval (0, 1) with 53 random bits.
  double uniform(Stream stream, std::uint32_t tag, std::uint32_t i, std::uint32_t j) const;

  /// Standard normal via Box-Muller on one Philox block.
  double normal(Stream stream, std::uint32_t tag, std::uint32_t i, std::uint32_t j) const;

 private:
  std::array<std::uint32_t, 4> block(Stream stream, std::uint32_t tag, std::uint32_t i,
                                     std::uint32_t j) const;

  std::uint64_t seed_;
};

}  // namespace ntk
