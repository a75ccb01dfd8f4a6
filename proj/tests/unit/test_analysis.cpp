#include <bit>
#include <cmath>
#include <random>

#include "../common/toy.hpp"
#include "doctest.h"
#include "seuforge/analysis.hpp"
#include "seuforge/compression.hpp"
#include "seuforge/error.hpp"

using namespace seuforge;
using seuforge::testing::tiny_model;
using seuforge::testing::toy_model;

namespace {

std::uint32_t bits_of(float v) { return std::bit_cast<std::uint32_t>(v); }

ModelGraph one_set(ParamRole role, Tensor t) {
  ModelGraph g;
  ParamSet p;
  p.index = 1;
  p.layer = "conv2D_14";
  p.role = role;
  p.tensor = std::move(t);
  g.params.push_back(std::move(p));
  return g;
}

// Independent decoder: count the set bits of the exponent field by hand.
ExponentRisk reference_risk(std::uint32_t pattern) {
  const std::uint32_t e = (pattern >> 23) & 0xFFu;
  if (e == 0x80u) return ExponentRisk::kExponent128;
  if (e & 0x80u) return ExponentRisk::kNone;
  int ones = 0;
  for (int i = 0; i < 7; ++i) ones += (e >> i) & 1u;
  if (ones == 7) return ExponentRisk::kFullMinusOne;
  if (ones == 6) return ExponentRisk::kPartialMinusOne;
  return ExponentRisk::kNone;
}

}  // namespace

TEST_SUITE("analysis") {
  TEST_CASE("exponent classification") {
    CHECK(classify_exponent(bits_of(1.5f)) == ExponentRisk::kFullMinusOne);
    CHECK(classify_exponent(bits_of(-1.5f)) == ExponentRisk::kFullMinusOne);
    // 0.1 has exponent 01111011: six ones in the low seven bits.
    CHECK(exponent_field(bits_of(0.1f)) == 0x7Bu);
    CHECK(classify_exponent(bits_of(0.1f)) == ExponentRisk::kPartialMinusOne);
    CHECK(classify_exponent(bits_of(0.75f)) == ExponentRisk::kPartialMinusOne);
    CHECK(classify_exponent(bits_of(2.5f)) == ExponentRisk::kExponent128);
    CHECK(classify_exponent(bits_of(0.3f)) == ExponentRisk::kPartialMinusOne);  // 01111101
    CHECK(classify_exponent(bits_of(0.2f)) == ExponentRisk::kNone);           // 01111100
    CHECK(classify_exponent(bits_of(0.0f)) == ExponentRisk::kNone);
    CHECK(classify_exponent(bits_of(-0.0f)) == ExponentRisk::kNone);
    CHECK(classify_exponent(1u) == ExponentRisk::kNone);  // subnormal
    CHECK(classify_exponent(bits_of(100.0f)) == ExponentRisk::kNone);
  }

  TEST_CASE("classification matches an independent decoder") {
    std::mt19937_64 gen(123);
    for (int i = 0; i < 100000; ++i) {
      const auto p = static_cast<std::uint32_t>(gen());
      REQUIRE(classify_exponent(p) == reference_risk(p));
    }
  }

  TEST_CASE("risky scan") {
    auto g = one_set(ParamRole::kConvKernel, Tensor::from_f32({5}, {1.5f, 0.75f, 2.5f, 100.0f, -1.25f}));
    const auto rows = risky_exponent_scan(g);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].total == 5);
    CHECK(rows[0].full_minus_one == 2);
    CHECK(rows[0].partial_minus_one == 1);
    CHECK(rows[0].exponent_128 == 1);
    CHECK(rows[0].non_protectable == 1);
    CHECK(rows[0].full_elements == std::vector<std::size_t>{0, 4});
    CHECK(rows[0].partial_elements == std::vector<std::size_t>{1});
    CHECK(risky_count(g) == 3);
    CHECK(risky_scan_csv(rows).find("conv2D_14") != std::string::npos);
  }

  TEST_CASE("positive ratios") {
    const auto g = one_set(ParamRole::kConvBias,
                           Tensor::from_f32({6}, {-0.8494f, 0.3171f, -0.0275f, 0.0394f, -0.1706f, 0.1090f}));
    auto rows = positive_ratio_table(g);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].positive == 3);
    CHECK(rows[0].total == 6);
    CHECK(rows[0].percent == doctest::Approx(50.0));

    const auto q = one_set(ParamRole::kConvBias, Tensor::from_i32({6}, {-25983, 2355, -187, 300, -1494, 923}));
    CHECK(positive_ratio_table(q)[0].percent == doctest::Approx(50.0));

    const auto neg = one_set(ParamRole::kConvBias, Tensor::from_f32({3}, {-1.0f, 0.0f, -0.5f}));
    CHECK(positive_ratio_table(neg)[0].percent == 0.0);
    CHECK(positive_ratio_table(neg, {ParamRole::kBnBeta}).empty());
    CHECK(positive_ratio_csv(rows).rfind("Name,Pos.,Total,%\n", 0) == 0);
    CHECK(positive_ratio_json(rows).find("\"Pos.\"") != std::string::npos);
  }

  TEST_CASE("two's complement widths") {
    CHECK(twos_complement_width(2355) == 13);
    CHECK(twos_complement_width(-25983) == 16);
    CHECK(twos_complement_width(0) == 1);
    CHECK(twos_complement_width(-1) == 1);
    CHECK(twos_complement_width(127) == 8);
    CHECK(twos_complement_width(-128) == 8);
    CHECK(twos_complement_width(128) == 9);
    for (std::int64_t x = -70000; x <= 70000; x += 7) {
      const int k = twos_complement_width(x);
      const std::int64_t lo = -(std::int64_t{1} << (k - 1)), hi = (std::int64_t{1} << (k - 1)) - 1;
      REQUIRE((x >= lo && x <= hi));
      if (k > 1) {
        const std::int64_t lo1 = -(std::int64_t{1} << (k - 2)), hi1 = (std::int64_t{1} << (k - 2)) - 1;
        REQUIRE(!(x >= lo1 && x <= hi1));
      }
    }
  }

  TEST_CASE("bits needed table") {
    auto q = one_set(ParamRole::kConvBias, Tensor::from_i32({6}, {-25983, 2355, -187, 300, -1494, 923}));
    q.metadata.quantized = true;
    const auto rows = bits_needed_table(q);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].positive_bits == 13);
    CHECK(rows[0].negative_bits == 16);
    CHECK(rows[0].max_positive == 2355);
    CHECK(rows[0].min_negative == -25983);
    auto pos = one_set(ParamRole::kConvBias, Tensor::from_i32({2}, {5, 0}));
    pos.metadata.quantized = true;
    CHECK_FALSE(bits_needed_table(pos)[0].negative_bits.has_value());
    CHECK(bits_needed_csv(bits_needed_table(pos)).find(",4,\n") != std::string::npos);
    CHECK_THROWS_AS(bits_needed_table(toy_model()), Error);
  }

  TEST_CASE("correlation") {
    const std::vector<double> a = {1, 2, 3}, b = {2, 4, 5};
    CHECK(correlate(a, b) == doctest::Approx(0.9820).epsilon(1e-4));
    CHECK(correlate(a, a) == doctest::Approx(1.0));
    const std::vector<double> n = {-1, -2, -3};
    CHECK(correlate(a, n) == doctest::Approx(-1.0));
    const std::vector<double> flat = {2, 2, 2}, short_series = {1};
    CHECK_THROWS_AS(correlate(a, flat), Error);
    CHECK_THROWS_AS(correlate(short_series, short_series), Error);
    CHECK_THROWS_AS(correlate(a, short_series), Error);
  }

  TEST_CASE("calibration report") {
    auto z = tiny_model();
    for (auto& p : z.params) {
      if (p.role == ParamRole::kConvBias || p.role == ParamRole::kBnBeta || p.role == ParamRole::kBnMean) {
        for (auto& v : p.tensor.f32()) v = 0.0f;
      }
    }
    const std::vector<Tensor> zeros = {Tensor({1, 4, 4, 2}, Encoding::kF32)};
    const auto r = calibration_report(z, zeros);
    CHECK(r.inputs == 1);
    for (const auto& l : r.activations.layers) {
      CHECK(l.stats.min == 0.0);
      CHECK(l.stats.max == 0.0);
    }

    const auto g = toy_model(9);
    const auto set = generate_calibration_set(16, 16, 4, 3, 2, 4);
    const auto rep = calibration_report(g, set.inputs);
    const auto& last = rep.activations.layers.back().stats;
    for (const auto& x : set.inputs) {
      for (float v : run_float(g, x).logits.f32()) {
        CHECK(v >= last.min);
        CHECK(v <= last.max);
      }
    }
    CHECK(calibration_report_json(g, rep) == calibration_report_json(g, calibration_report(g, set.inputs)));
  }
}
