#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "hsd/core/bytes.hpp"
#include "hsd/core/half.hpp"
#include "hsd/core/parallel.hpp"
#include "hsd/core/rng.hpp"

using namespace hsd;

TEST_CASE("half: exact values and rounding") {
  CHECK(float_to_half(0.0f) == 0x0000);
  CHECK(float_to_half(-0.0f) == 0x8000);
  CHECK(float_to_half(1.0f) == 0x3C00);
  CHECK(float_to_half(-2.0f) == 0xC000);
  CHECK(float_to_half(65504.0f) == 0x7BFF);
  CHECK(float_to_half(1e6f) == 0x7C00);
  CHECK(float_to_half(std::ldexp(1.0f, -24)) == 0x0001);  // smallest subnormal
  CHECK(float_to_half(std::ldexp(1.0f, -26)) == 0x0000);  // below half of it
  // ties go to even
  CHECK(float_to_half(1.0f + std::ldexp(1.0f, -11)) == 0x3C00);
  CHECK(float_to_half(1.0f + 3 * std::ldexp(1.0f, -11)) == 0x3C02);
  CHECK(std::isnan(half_to_float(float_to_half(std::numeric_limits<float>::quiet_NaN()))));
  CHECK(half_to_float(0x7C00) == std::numeric_limits<float>::infinity());
}

TEST_CASE("half: every finite half round-trips through float") {
  for (std::uint32_t h = 0; h < 0x10000; ++h) {
    const auto bits = static_cast<std::uint16_t>(h);
    if ((bits & 0x7C00) == 0x7C00) continue;
    REQUIRE(float_to_half(half_to_float(bits)) == bits);
  }
}

TEST_CASE("bytes: little-endian round trip and bounds") {
  ByteWriter w;
  w.u8(0xAB);
  w.u16(0x1234);
  w.u32(0xDEADBEEF);
  w.u64(0x0102030405060708ull);
  w.f32(-1.5f);
  w.f64(0.1);
  w.str("hello");
  const auto& d = w.data();
  CHECK(d[1] == 0x34);
  CHECK(d[2] == 0x12);

  ByteReader r(d);
  CHECK(r.u8() == 0xAB);
  CHECK(r.u16() == 0x1234);
  CHECK(r.u32() == 0xDEADBEEF);
  CHECK(r.u64() == 0x0102030405060708ull);
  CHECK(r.f32() == -1.5f);
  CHECK(r.f64() == 0.1);
  CHECK(r.str() == "hello");
  CHECK_NOTHROW(r.expect_end());
  CHECK_THROWS_AS(r.u8(), DecodeError);

  ByteReader r2(std::span<const std::uint8_t>(d).first(3));
  r2.u8();
  CHECK_THROWS_AS(r2.u32(), DecodeError);
}

TEST_CASE("mix_seed separates streams") {
  CHECK(mix_seed(1, 0) != mix_seed(1, 1));
  CHECK(mix_seed(1, 0) != mix_seed(2, 0));
  CHECK(mix_seed(5, 9) == mix_seed(5, 9));
}

TEST_CASE("parallel_for visits every index once") {
  std::vector<int> hits(1000, 0);
  parallel_for(1000, 4, [&](int i) { hits[static_cast<std::size_t>(i)] += 1; });
  for (int h : hits) REQUIRE(h == 1);
  CHECK_THROWS(parallel_for(10, 3, [](int i) {
    if (i == 7) throw std::runtime_error("boom");
  }));
}
