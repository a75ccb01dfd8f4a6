#include <bit>
#include <cmath>
#include <functional>

#include "../common/toy.hpp"
#include "doctest.h"
#include "seuforge/error.hpp"
#include "seuforge/fault.hpp"

using namespace seuforge;
using seuforge::testing::tiny_model;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kIo;
}

}  // namespace

TEST_SUITE("fault") {
  TEST_CASE("f32 flips") {
    CHECK(std::isinf(flip_bit_f32(1.0f, 30)));
    CHECK(flip_bit_f32(1.0f, 30) > 0);
    CHECK(std::isnan(flip_bit_f32(1.5f, 30)));
    // 0.1: exponent 123 -> 251, value 1.6 * 2^124.
    CHECK(flip_bit_f32(0.1f, 30) == doctest::Approx(3.4028236692e37).epsilon(1e-6));
    CHECK(flip_bit_f32(2.0f, 31) == -2.0f);
    CHECK(flip_bit_f32(0x00000000u, 0) == 1u);
    CHECK_THROWS_AS(flip_bit_f32(0u, 32), Error);
    CHECK_THROWS_AS(flip_bit_f32(0u, -1), Error);
  }

  TEST_CASE("integer flips") {
    CHECK(decode_int(flip_bit_int(0xFFu, 7, 8), 8) == 127);
    CHECK(decode_int(flip_bit_int(0x01u, 7, 8), 8) == -127);
    CHECK(decode_int(flip_bit_int(0u, 16, 32), 32) == 65536);
    CHECK(decode_int(0x80u, 8) == -128);
    CHECK_THROWS_AS(flip_bit_int(0u, 8, 8), Error);
    CHECK_THROWS_AS(flip_bit_int(0u, 0, 16), Error);
  }

  TEST_CASE("apply and revert") {
    auto g = tiny_model();
    const auto h0 = model_hash(g);
    FaultInjector inj(g);
    const auto t = inj.apply({1, 3, 30, Encoding::kF32, 0});
    CHECK(model_hash(g) != h0);
    CHECK(inj.depth() == 1);
    inj.revert(t);
    CHECK(model_hash(g) == h0);
    CHECK(inj.depth() == 0);

    const auto a = inj.apply({1, 0, 5, Encoding::kF32, 0});
    const auto b = inj.apply({2, 1, 31, Encoding::kF32, 1});
    CHECK(code_of([&] { inj.revert(a); }) == ErrorCode::kState);  // out of order
    inj.revert(b);
    inj.revert(a);
    CHECK(model_hash(g) == h0);
    CHECK(code_of([&] { inj.revert(a); }) == ErrorCode::kState);  // already used
    CHECK(code_of([&] { inj.revert(RevertToken{999}); }) == ErrorCode::kState);

    // Same element twice: the value is the double flip of the pattern.
    const std::uint32_t orig = g.pset(1).tensor.bits(2);
    inj.apply({1, 2, 4, Encoding::kF32, 0});
    inj.apply({1, 2, 9, Encoding::kF32, 0});
    CHECK(g.pset(1).tensor.bits(2) == flip_bit_f32(flip_bit_f32(orig, 4), 9));
    inj.revert_all();
    CHECK(model_hash(g) == h0);
  }

  TEST_CASE("invalid faults") {
    auto g = tiny_model();
    FaultInjector inj(g);
    CHECK_THROWS_AS(inj.apply({0, 0, 0, Encoding::kF32, 0}), Error);
    CHECK_THROWS_AS(inj.apply({1, 1000, 0, Encoding::kF32, 0}), Error);
    CHECK_THROWS_AS(inj.apply({1, 0, 32, Encoding::kF32, 0}), Error);
    CHECK_THROWS_AS(inj.apply({1, 0, 3, Encoding::kI8, 0}), Error);
    CHECK(inj.depth() == 0);
  }

  TEST_CASE("json round trip") {
    const FaultSpec f{12, 345, 30, Encoding::kI32, 77};
    CHECK(fault_from_json(fault_to_json(f)) == f);
    CHECK_THROWS_AS(fault_from_json("{\"pset\": 1}"), Error);
  }

  TEST_CASE("fault space") {
    ModelGraph g;
    ParamSet a;
    a.index = 1;
    a.tensor = Tensor({10}, Encoding::kF32);
    g.params.push_back(a);
    CHECK(fault_space_size(g, ParamFilter::all()) == 320);
    CHECK(fault_space_size(g, ParamFilter{}) == 0);

    ModelGraph q;
    ParamSet k, b;
    k.index = 1;
    k.role = ParamRole::kConvKernel;
    k.tensor = Tensor({100}, Encoding::kI8);
    b.index = 2;
    b.role = ParamRole::kConvBias;
    b.tensor = Tensor({4}, Encoding::kI32);
    q.params = {k, b};
    CHECK(fault_space_size(q, ParamFilter::all()) == 928);
    CHECK(fault_space_size(q, ParamFilter{{ParamRole::kConvBias}, {}, false}) == 128);
    CHECK(fault_space_size(q, ParamFilter{{}, {1}, false}) == 800);
    CHECK(fault_space_size(q, ParamFilter{{ParamRole::kConvBias}, {1}, false}) == 0);
  }
}
