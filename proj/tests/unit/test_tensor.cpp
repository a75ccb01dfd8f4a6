#include <bit>
#include <functional>
#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "seuforge/error.hpp"
#include "seuforge/kernels.hpp"
#include "seuforge/quant.hpp"
#include "seuforge/tensor.hpp"

using namespace seuforge;

namespace {

Tensor random_f32(Shape shape, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<float> d(lo, hi);
  std::vector<float> v(element_count(shape));
  for (auto& x : v) x = d(gen);
  return Tensor::from_f32(std::move(shape), std::move(v));
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kIo;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("construction and bit access") {
    Tensor t({2, 3}, Encoding::kF32);
    CHECK(t.size() == 6);
    CHECK(t.rank() == 2);
    CHECK(t.value(4) == 0.0);
    t.set_bits(1, float_bits(1.5f));
    CHECK(t.f32()[1] == 1.5f);
    CHECK(t.bits(1) == 0x3FC00000u);

    Tensor q = Tensor::from_i8({3}, {-1, 0, 127});
    CHECK(q.bits(0) == 0xFFu);
    CHECK(q.value(0) == -1.0);
    q.set_bits(0, 0x17Fu);  // only the low 8 bits are stored
    CHECK(q.i8()[0] == 127);

    Tensor w = Tensor::from_i32({1}, {-2});
    CHECK(w.bits(0) == 0xFFFFFFFEu);
    CHECK(bit_width(Encoding::kI8) == 8);
    CHECK(bit_width(Encoding::kI32) == 32);
  }

  TEST_CASE("shape errors") {
    CHECK(code_of([] { Tensor::from_f32({2, 2}, {1, 2, 3}); }) == ErrorCode::kShapeMismatch);
    Tensor t({2, 2}, Encoding::kF32);
    CHECK(code_of([&] { t.reshape({3}); }) == ErrorCode::kShapeMismatch);
    CHECK(code_of([&] { (void)t.i8(); }) == ErrorCode::kInvalidArgument);
    CHECK(code_of([&] { (void)t.bits(4); }) == ErrorCode::kOutOfRange);
    t.reshape({4});
    CHECK(t.shape() == Shape{4});
  }

  TEST_CASE("equality is bitwise") {
    const float nan_a = std::bit_cast<float>(0x7FC00001u);
    const float nan_b = std::bit_cast<float>(0x7FC00002u);
    CHECK(Tensor::from_f32({1}, {nan_a}) == Tensor::from_f32({1}, {nan_a}));
    CHECK_FALSE(Tensor::from_f32({1}, {nan_a}) == Tensor::from_f32({1}, {nan_b}));
    CHECK_FALSE(Tensor::from_f32({1}, {0.0f}) == Tensor::from_f32({1}, {-0.0f}));
  }

  TEST_CASE("encoding names round-trip") {
    for (auto e : {Encoding::kF32, Encoding::kI8, Encoding::kI32}) CHECK(encoding_from_string(to_string(e)) == e);
    CHECK_THROWS_AS(encoding_from_string("f16"), Error);
  }
}

TEST_SUITE("kernels") {
  TEST_CASE("conv2d worked cases") {
    const auto y = conv2d_forward(Tensor::from_f32({1, 1, 1, 1}, {3}), Tensor::from_f32({1, 1, 1, 1}, {2}),
                                  std::vector<float>{1}, 1, Padding::kSame);
    CHECK(y.f32()[0] == 7.0f);

    const auto z = conv2d_forward(random_f32({1, 4, 5, 2}, 1), Tensor({3, 3, 2, 3}, Encoding::kF32),
                                  std::vector<float>{0.5f, -1.0f, 2.0f}, 1, Padding::kSame);
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(z.f32()[i] == std::vector<float>{0.5f, -1.0f, 2.0f}[i % 3]);

    Tensor ones3({1, 3, 3, 1}, Encoding::kF32);
    for (auto& v : ones3.f32()) v = 1.0f;
    Tensor k3({3, 3, 1, 1}, Encoding::kF32);
    for (auto& v : k3.f32()) v = 1.0f;
    const auto s = conv2d_forward(ones3, k3, std::vector<float>{0}, 1, Padding::kValid);
    CHECK(s.shape() == Shape{1, 1, 1, 1});
    CHECK(s.f32()[0] == 9.0f);
  }

  TEST_CASE("conv2d matches the direct oracle") {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
      const bool same = seed % 2 == 0;
      const std::size_t stride = seed < 4 ? 1 : 2;
      const auto x = random_f32({2, 7, 6, 3}, seed);
      const auto k = random_f32({3, 3, 3, 4}, seed + 100);
      const std::vector<float> b{0.1f, -0.2f, 0.3f, 0.0f};
      const auto y = conv2d_forward(x, k, b, stride, same ? Padding::kSame : Padding::kValid);
      const auto ref = oracle::conv2d(x, k, {b.begin(), b.end()}, stride, same);
      REQUIRE(y.size() == ref.size());
      CHECK(oracle::max_abs_diff(y.f32(), ref) < 1e-5);
    }
  }

  TEST_CASE("conv2d non-finite weights poison border outputs too") {
    Tensor k({3, 3, 1, 1}, Encoding::kF32);
    k.f32()[0] = std::numeric_limits<float>::infinity();
    const auto y = conv2d_forward(Tensor({1, 2, 2, 1}, Encoding::kF32), k, std::vector<float>{0}, 1, Padding::kSame);
    for (float v : y.f32()) CHECK(std::isnan(v));
  }

  TEST_CASE("transposed conv") {
    Tensor k({2, 2, 1, 1}, Encoding::kF32);
    for (auto& v : k.f32()) v = 1.0f;
    const auto y = conv2d_transpose_forward(Tensor::from_f32({1, 1, 1, 1}, {1}), k, std::vector<float>{0}, 2);
    CHECK(y.shape() == Shape{1, 2, 2, 1});
    for (float v : y.f32()) CHECK(v == 1.0f);

    const auto c = conv2d_transpose_forward(Tensor::from_f32({1, 1, 1, 1}, {5}), Tensor({2, 2, 1, 1}, Encoding::kF32),
                                            std::vector<float>{-3}, 2);
    for (float v : c.f32()) CHECK(v == -3.0f);

    const auto x = random_f32({1, 2, 2, 3}, 9);
    const auto kk = random_f32({2, 2, 3, 2}, 10);
    const std::vector<float> b{0.25f, -0.5f};
    const auto r = conv2d_transpose_forward(x, kk, b, 2);
    CHECK(r.shape() == Shape{1, 4, 4, 2});
    CHECK(oracle::max_abs_diff(r.f32(), oracle::conv2d_transpose(x, kk, {b.begin(), b.end()}, 2)) < 1e-6);
    CHECK_THROWS_AS(conv2d_transpose_forward(x, kk, b, 1), Error);
  }

  TEST_CASE("batch norm") {
    // gamma = sqrt(1 + eps) cancels the variance term exactly enough for 1 ulp.
    BnParams id{{std::sqrt(1.0f + 1e-3f)}, {0}, {0}, {1}, 1e-3f};
    const auto x = random_f32({1, 2, 2, 1}, 3);
    const auto xi = batchnorm_forward(x, id);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(xi.f32()[i] == doctest::Approx(x.f32()[i]).epsilon(1e-6));

    BnParams p{{0.5f}, {0.2f}, {1.0f}, {4.0f}, 1e-3f};
    CHECK(batchnorm_forward(Tensor::from_f32({1, 1, 1, 1}, {2}), p).f32()[0] ==
          doctest::Approx(0.5 / std::sqrt(4.001) + 0.2).epsilon(1e-6));
    BnParams zero_eps{{1}, {0}, {0}, {1}, 0.0f};
    CHECK_THROWS_AS(batchnorm_forward(x, zero_eps), Error);

    BnParams n{{std::numeric_limits<float>::quiet_NaN(), 1.0f}, {0, 0}, {0, 0}, {1, 1}, 1e-3f};
    const auto y = batchnorm_forward(random_f32({1, 3, 3, 2}, 4), n);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::isnan(y.f32()[i]) == (i % 2 == 0));
    BnParams bad{{1, 1}, {0}, {0, 0}, {1, 1}, 1e-3f};
    CHECK_THROWS_AS(batchnorm_forward(random_f32({1, 1, 1, 2}, 1), bad), Error);
  }

  TEST_CASE("relu and maxpool") {
    const float inf = std::numeric_limits<float>::infinity();
    const float nan = std::numeric_limits<float>::quiet_NaN();
    const auto r = relu(Tensor::from_f32({5}, {-1, 0, 2, -inf, nan}));
    CHECK(r.f32()[0] == 0.0f);
    CHECK(r.f32()[1] == 0.0f);
    CHECK(r.f32()[2] == 2.0f);
    CHECK(r.f32()[3] == 0.0f);
    CHECK(std::isnan(r.f32()[4]));

    const auto m = maxpool2d(Tensor::from_f32({1, 2, 2, 1}, {1, 2, 3, 4}));
    CHECK(m.shape() == Shape{1, 1, 1, 1});
    CHECK(m.f32()[0] == 4.0f);
    Tensor c({1, 4, 4, 2}, Encoding::kF32);
    for (auto& v : c.f32()) v = 0.5f;
    CHECK(maxpool2d(c).f32()[3] == 0.5f);
    CHECK(std::isnan(maxpool2d(Tensor::from_f32({1, 2, 2, 1}, {1, nan, 3, 4})).f32()[0]));
    CHECK(std::isnan(maxpool2d(Tensor::from_f32({1, 2, 2, 1}, {nan, 1, 3, 4})).f32()[0]));
    CHECK_THROWS_AS(maxpool2d(Tensor({1, 3, 2, 1}, Encoding::kF32)), Error);
  }

  TEST_CASE("concat and split") {
    const auto a = Tensor::from_f32({1, 1, 2, 1}, {1, 2});
    const auto b = Tensor::from_f32({1, 1, 2, 1}, {3, 4});
    const auto c = concat_channels(a, b);
    CHECK(c.shape() == Shape{1, 1, 2, 2});
    CHECK(c.f32()[0] == 1.0f);
    CHECK(c.f32()[1] == 3.0f);
    const auto [x, y] = split_channels(c, 1);
    CHECK(x == a);
    CHECK(y == b);
    const auto big = random_f32({2, 3, 3, 5}, 12);
    const auto [p, q] = split_channels(big, 2);
    CHECK(concat_channels(p, q) == big);
    CHECK_THROWS_AS(concat_channels(a, Tensor({1, 2, 2, 1}, Encoding::kF32)), Error);
  }

  TEST_CASE("argmax") {
    CHECK(argmax_channels(Tensor::from_f32({1, 1, 1, 2}, {0.1f, 0.9f})).labels[0] == 1);
    CHECK(argmax_channels(Tensor::from_f32({1, 1, 1, 2}, {0.5f, 0.5f})).labels[0] == 0);
    CHECK(argmax_channels(Tensor::from_f32({1, 1, 1, 2}, {std::nanf(""), 1.0f})).labels[0] == kInvalidClass);
    CHECK(argmax_channels(Tensor::from_f32({1, 1, 1, 2}, {1.0f, std::nanf("")})).labels[0] == kInvalidClass);
    const auto m = argmax_channels(Tensor::from_f32({1, 1, 2, 3}, {0, 0, 1, 3, 2, 1}));
    CHECK(m.labels == std::vector<std::int32_t>{2, 0});
  }
}

TEST_SUITE("quant") {
  TEST_CASE("round half even") {
    CHECK(round_half_even(0.5) == 0.0);
    CHECK(round_half_even(1.5) == 2.0);
    CHECK(round_half_even(2.5) == 2.0);
    CHECK(round_half_even(-2.5) == -2.0);
    CHECK(round_half_even(-3.5) == -4.0);
    CHECK(round_half_even(2.4) == 2.0);
    CHECK(saturate(300, 8) == 127);
    CHECK(saturate(-300, 8) == -128);
  }

  TEST_CASE("weight quantization") {
    const auto q = quantize_weights(Tensor::from_f32({3}, {-1.0f, 0.5f, 1.0f}), 1.0);
    CHECK(symmetric_weight_params(1.0).scale == doctest::Approx(1.0 / 127));
    CHECK(q.i8()[0] == -127);
    CHECK(q.i8()[1] == 64);  // 63.5 rounds to even
    CHECK(q.i8()[2] == 127);
    CHECK(quantize_weights(Tensor::from_f32({1}, {0.0f}), 0.37).i8()[0] == 0);
    CHECK(symmetric_weight_params(0.0).scale == 1.0);
  }

  TEST_CASE("activation tables include zero") {
    const auto p = activation_params(0.5, 2.0);
    CHECK(dequantize(p.zero_point, p) == 0.0);
    const auto n = activation_params(-1.0, 3.0);
    CHECK(n.scale == doctest::Approx(4.0 / 255));
    CHECK(std::fabs(dequantize(n.zero_point, n)) < 1e-12);
  }

  TEST_CASE("requantize worked cases") {
    CHECK(requantize(2 * 3 + 1, 1.0, 0) == 7);
    CHECK(requantize(2 * (3 - 1) + 0, 1.0, 0) == 4);
    CHECK(requantize(1000, 1.0, 0) == 127);
    CHECK(requantize(-5, 1.0, 3, 3) == 3);

    // Integer conv against the same arithmetic spelled out.
    const auto x = Tensor::from_i8({1, 1, 1, 1}, {3});
    const auto k = Tensor::from_i8({1, 1, 1, 1}, {2});
    const auto b = Tensor::from_i32({1}, {0});
    CHECK(quantized_conv2d(x, 1, k, b, 1.0, 0, 1, Padding::kSame).i8()[0] == 4);
  }

  TEST_CASE("quantized relu and requantize") {
    const auto r = quantized_relu(Tensor::from_i8({3}, {-5, 2, 9}), 2);
    CHECK(r.i8()[0] == 2);
    CHECK(r.i8()[2] == 9);
    QuantParams a{0.1, 0, 8}, b{0.2, 0, 8};
    CHECK(requantize_tensor(Tensor::from_i8({1}, {10}), a, b).i8()[0] == 5);
  }
}
