#include <doctest.h>

#include <cmath>
#include <set>

#include "ntk/random.hpp"

using ntk::CounterRng;
using ntk::Stream;

TEST_CASE("philox4x32-10 reproduces the Random123 known-answer vectors") {
  using A4 = std::array<std::uint32_t, 4>;
  using A2 = std::array<std::uint32_t, 2>;
  CHECK(ntk::philox4x32(A4{0, 0, 0, 0}, A2{0, 0}) ==
        A4{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(ntk::philox4x32(A4{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff},
                        A2{0xffffffff, 0xffffffff}) ==
        A4{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(ntk::philox4x32(A4{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344},
                        A2{0xa4093822, 0x299f31d0}) ==
        A4{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("draws are pure functions of their address") {
  const CounterRng a(42);
  const CounterRng b(42);
  CHECK(a.normal(Stream::weight, 1, 5, 7) == b.normal(Stream::weight, 1, 5, 7));
  CHECK(a.uniform(Stream::data_input, 0, 3, 0) == b.uniform(Stream::data_input, 0, 3, 0));
  // Order of requests is irrelevant.
  const double late = a.normal(Stream::bias, 2, 9, 0);
  (void)a.normal(Stream::bias, 2, 8, 0);
  CHECK(a.normal(Stream::bias, 2, 9, 0) == late);
}

TEST_CASE("streams, tags, positions and seeds give distinct draws") {
  const CounterRng r(1);
  std::set<double> seen;
  for (Stream s : {Stream::weight, Stream::bias, Stream::data_input, Stream::data_noise,
                   Stream::data_split, Stream::experiment}) {
    for (std::uint32_t tag = 0; tag < 3; ++tag)
      for (std::uint32_t i = 0; i < 4; ++i) seen.insert(r.uniform(s, tag, i, 0));
  }
  CHECK(seen.size() == 6 * 3 * 4);
  CHECK(CounterRng(1).normal(Stream::weight, 0, 0, 0) != CounterRng(2).normal(Stream::weight, 0, 0, 0));
  CHECK(r.normal(Stream::weight, 0, 0, 1) != r.normal(Stream::weight, 0, 1, 0));
}

TEST_CASE("uniform lies in (0, 1) and normal has unit moments") {
  const CounterRng r(7);
  constexpr int n = 200000;
  double mean = 0.0, sq = 0.0, fourth = 0.0, umin = 1.0, umax = 0.0, umean = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform(Stream::experiment, 0, static_cast<std::uint32_t>(i), 0);
    umin = std::min(umin, u);
    umax = std::max(umax, u);
    umean += u / n;
    const double z = r.normal(Stream::experiment, 1, static_cast<std::uint32_t>(i), 0);
    mean += z / n;
    sq += z * z / n;
    fourth += z * z * z * z / n;
  }
  CHECK(umin > 0.0);
  CHECK(umax < 1.0);
  // Five standard errors.
  CHECK(std::abs(umean - 0.5) < 5.0 * std::sqrt(1.0 / 12.0 / n));
  CHECK(std::abs(mean) < 5.0 / std::sqrt(static_cast<double>(n)));
  CHECK(std::abs(sq - 1.0) < 5.0 * std::sqrt(2.0 / n));
  CHECK(std::abs(fourth - 3.0) < 5.0 * std::sqrt(96.0 / n));
}
