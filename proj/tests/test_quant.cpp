#include <cmath>
#include <limits>

#include "doctest.h"
#include "lift/common.hpp"
#include "lift/quant.hpp"
#include "lift/random.hpp"
#include "oracles.hpp"

using namespace lift;

TEST_CASE("quantize examples") {
  CHECK(quantize(0.0, {0.1f, 0}) == 0);
  CHECK(quantize(0.1 * 200, {0.1f, 0}) == 127);
  CHECK(quantize(-0.1 * 200, {0.1f, 0}) == -128);
  CHECK(quantize(1.0, {0.25f, -10}) == -6);
}

TEST_CASE("quantize rounds half to even") {
  const QuantParams qp{1.0f, 0};
  CHECK(quantize(0.5, qp) == 0);
  CHECK(quantize(1.5, qp) == 2);
  CHECK(quantize(2.5, qp) == 2);
  CHECK(quantize(-0.5, qp) == 0);
  CHECK(quantize(-1.5, qp) == -2);
  CHECK(round_half_even(-2.5) == -2.0);
  CHECK(round_half_even(3.5) == 4.0);
}

TEST_CASE("dequantize examples") {
  CHECK(dequantize(7, {0.3f, 7}) == 0.0);
  CHECK(dequantize(127, {0.1f, 0}) == doctest::Approx(12.7).epsilon(1e-6));
}

TEST_CASE("quantize round trip within half a step, monotone") {
  Rng rng(1);
  for (int n = 0; n < 200; ++n) {
    const QuantParams qp{static_cast<float>(rng.uniform(1e-3, 1.0)), static_cast<int32_t>(rng.range(-128, 127))};
    const double lo = (-128 - qp.zero_point) * static_cast<double>(qp.scale);
    const double hi = (127 - qp.zero_point) * static_cast<double>(qp.scale);
    double prev = lo - 1;
    int prev_q = -128;
    for (int k = 0; k < 100; ++k) {
      const double x = rng.uniform(lo - 1, hi + 1);
      const double clamped = std::clamp(x, lo, hi);
      CHECK(std::fabs(dequantize(quantize(x, qp), qp) - clamped) <= qp.scale / 2.0 + 1e-9);
    }
    for (int k = 0; k < 300; ++k) {
      const double x = prev + rng.uniform(0, 0.05);
      const int q = quantize(x, qp);
      CHECK(q >= prev_q);
      prev = x;
      prev_q = q;
    }
  }
}

TEST_CASE("quant params validation") {
  CHECK_THROWS_AS((QuantParams{0.0f, 0}.validate()), ParameterError);
  CHECK_THROWS_AS((QuantParams{-1.0f, 0}.validate()), ParameterError);
  CHECK_THROWS_AS((QuantParams{std::numeric_limits<float>::infinity(), 0}.validate()), ParameterError);
  CHECK_THROWS_AS((QuantParams{1.0f, 128}.validate()), ParameterError);
  CHECK_NOTHROW((QuantParams{1.0f, -128}.validate()));
}

TEST_CASE("calibrate examples") {
  const std::vector<double> zeros(10, 0.0);
  QuantParams qp = calibrate(zeros, CalibrationMode::minmax());
  CHECK(qp.scale == static_cast<float>(1.0 / 127));
  CHECK(qp.zero_point == 0);

  const std::vector<double> pm1{-1.0, 1.0};
  qp = calibrate(pm1, CalibrationMode::minmax());
  CHECK(qp.scale == static_cast<float>(2.0 / 255));
  CHECK(qp.zero_point == 0);  // -128 - rhe(-127.5) = -128 + 128

  const std::vector<double> byte{0.0, 255.0};
  qp = calibrate(byte, CalibrationMode::minmax());
  CHECK(qp.scale == 1.0f);
  CHECK(qp.zero_point == -128);
}

TEST_CASE("calibrate: degenerate and error cases") {
  const std::vector<double> same{-3.0, -3.0};
  QuantParams qp = calibrate(same, CalibrationMode::minmax());
  CHECK(qp.scale == static_cast<float>(3.0 / 127));
  CHECK(qp.zero_point == 0);
  CHECK_THROWS_AS(calibrate(std::vector<double>{}, CalibrationMode::minmax()), CalibrationError);
  CHECK_THROWS_AS(calibrate(std::vector<double>{1.0, std::nan("")}, CalibrationMode::minmax()),
                  CalibrationError);
}

TEST_CASE("calibrate: minimum maps to -128") {
  Rng rng(4);
  for (int n = 0; n < 100; ++n) {
    const double lo = rng.uniform(-10, -0.1), hi = rng.uniform(0.1, 10);
    const QuantParams qp = calibrate(std::vector<double>{lo, hi, 0.0}, CalibrationMode::minmax());
    CHECK(qp.scale == static_cast<float>((hi - lo) / 255));
    CHECK(quantize(lo, qp) == -128);
    CHECK(quantize(hi, qp) >= 126);
    qp.validate();
  }
}

TEST_CASE("calibrate: percentile clips outliers") {
  std::vector<double> v;
  for (int n = 0; n <= 1000; ++n) v.push_back(n / 1000.0);
  v.push_back(1000.0);
  const QuantParams mm = calibrate(v, CalibrationMode::minmax());
  const QuantParams pc = calibrate(v, CalibrationMode::clipped(99.0));
  CHECK(pc.scale < mm.scale / 100);
  CHECK(pc.scale > 0.9 / 255);
}

TEST_CASE("requantizer: identity and zero") {
  const Requantizer one = Requantizer::from_factor(1.0, 0);
  CHECK(one.multiplier() >= (1 << 30));
  CHECK(one.factor() == 1.0);
  CHECK(requantize(5, one) == 5);
  CHECK(requantize(0, Requantizer::from_factor(0.37, -17)) == -17);
  CHECK(requantize(1000, one) == 127);
  CHECK(requantize(-1000, one) == -128);
}

TEST_CASE("requantizer: factor range") {
  CHECK_THROWS_AS(Requantizer::from_factor(2.0, 0), ParameterError);
  CHECK_THROWS_AS(Requantizer::from_factor(0.0, 0), ParameterError);
  CHECK_THROWS_AS(Requantizer::from_factor(-0.5, 0), ParameterError);
  CHECK_THROWS_AS(Requantizer::from_factor(std::nan(""), 0), ParameterError);
  CHECK_THROWS_AS(Requantizer::from_factor(0x1p-33, 0), ParameterError);
  CHECK_NOTHROW(Requantizer::from_factor(0x1p-32, 0));
  CHECK_NOTHROW(Requantizer::from_factor(1.999, 0));
}

TEST_CASE("requantizer: 1000 random pairs against the real oracle") {
  Rng rng(99);
  for (int n = 0; n < 1000; ++n) {
    const double factor = std::exp2(rng.uniform(-20, 0.99));
    const int32_t zp = static_cast<int32_t>(rng.range(-128, 127));
    const int32_t acc = static_cast<int32_t>(rng.range(INT32_MIN, INT32_MAX));
    const Requantizer r = Requantizer::from_factor(factor, zp);
    CHECK(std::fabs(r.factor() - factor) <= factor * 0x1p-24);
    const double real = std::nearbyint(static_cast<double>(acc) * factor) + zp;
    const int expect = static_cast<int>(std::clamp(real, -128.0, 127.0));
    CHECK(std::abs(requantize(acc, r) - expect) <= 1);
    // small accumulators that stay in range
    const int32_t small = static_cast<int32_t>(rng.range(-200, 200));
    const double small_real = std::nearbyint(small * factor) + zp;
    CHECK(std::abs(requantize(small, r) - static_cast<int>(std::clamp(small_real, -128.0, 127.0))) <= 1);
  }
}

TEST_CASE("requantizer: exact fixed-point semantics") {
  Rng rng(5);
  for (int n = 0; n < 5000; ++n) {
    const Requantizer r = Requantizer::from_factor(std::exp2(rng.uniform(-31, 0.99)), 3);
    const int32_t acc = static_cast<int32_t>(rng.range(INT32_MIN, INT32_MAX));
    const int64_t expect = oracle::fixed_point_round(acc, r.multiplier(), r.shift());
    CHECK(r.scale(acc) == expect);
    CHECK(r.apply(acc) == oracle::clamp8(expect + 3));
    CHECK(r.apply_relu(acc) == oracle::clamp8(std::max<int64_t>(expect, 0) + 3));
  }
}

TEST_CASE("requantizer: monotone in the accumulator") {
  const Requantizer r = Requantizer::from_factor(0.0123, -5);
  int8_t prev = -128;
  for (int32_t acc = -20000; acc <= 20000; acc += 7) {
    const int8_t q = requantize(acc, r);
    CHECK(q >= prev);
    prev = q;
  }
}

TEST_CASE("per-channel weight quantization") {
  const std::vector<double> w{0.5, -2.0, 0.0, -1.0, 1.0, 0.0};  // [3][2]: channels interleaved
  std::vector<float> scales;
  const auto q = quantize_per_channel(w, 3, scales);
  REQUIRE(scales.size() == 3);
  CHECK(scales[0] == static_cast<float>(1.0 / 127));
  CHECK(scales[1] == static_cast<float>(2.0 / 127));
  CHECK(scales[2] == 1.0f);
  CHECK(q[0] == 64);  // 0.5 * 127 = 63.5 -> 64
  CHECK(q[1] == -127);
  CHECK(q[3] == -127);
  CHECK(q[4] == 64);
  for (int8_t v : q) CHECK(v >= -127);
}

TEST_CASE("symmetric params and range params") {
  const QuantParams s = symmetric_params(12.7);
  CHECK(s.zero_point == 0);
  CHECK(s.scale == doctest::Approx(0.1));
  const QuantParams r = params_from_range(0.0, 255.0);
  CHECK(r.scale == 1.0f);
  CHECK(r.zero_point == -128);
}
