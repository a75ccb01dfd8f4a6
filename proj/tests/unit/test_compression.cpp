#include <cmath>
#include <functional>

#include "../common/toy.hpp"
#include "doctest.h"
#include "seuforge/compression.hpp"
#include "seuforge/error.hpp"
#include "seuforge/inference.hpp"
#include "seuforge/model_io.hpp"
#include "seuforge/quant.hpp"

using namespace seuforge;
using seuforge::testing::tiny_model;
using seuforge::testing::toy_model;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kIo;
}

// conv(1x1, 1 -> f) -> bn -> relu -> out(1x1, f -> 2)
ModelGraph pointwise(std::size_t filters, float epsilon) {
  ModelGraph g;
  g.input_channels = 1;
  g.class_count = 2;
  g.layers.push_back({LayerKind::kConv2d, "conv", {"input"}, 1, 1, Padding::kSame, filters});
  g.layers.push_back({LayerKind::kBatchNorm, "bn", {"conv"}, 0, 1, Padding::kSame, filters, epsilon});
  g.layers.push_back({LayerKind::kRelu, "relu", {"bn"}});
  g.layers.push_back({LayerKind::kOutputConv, "out", {"relu"}, 1, 1, Padding::kSame, 2});
  auto add = [&](const std::string& layer, ParamRole role, Shape shape, std::vector<float> v) {
    ParamSet p;
    p.layer = layer;
    p.role = role;
    p.tensor = Tensor::from_f32(std::move(shape), std::move(v));
    g.params.push_back(std::move(p));
  };
  const std::vector<float> ones(filters, 1.0f), zeros(filters, 0.0f);
  std::vector<float> wk(filters), wo(filters * 2);
  for (std::size_t i = 0; i < filters; ++i) wk[i] = 1.0f + static_cast<float>(i);
  for (std::size_t i = 0; i < wo.size(); ++i) wo[i] = (i % 3 == 0 ? -0.5f : 0.25f) * static_cast<float>(i + 1);
  add("conv", ParamRole::kConvKernel, {1, 1, 1, filters}, wk);
  add("conv", ParamRole::kConvBias, {filters}, zeros);
  add("bn", ParamRole::kBnGamma, {filters}, ones);
  add("bn", ParamRole::kBnBeta, {filters}, zeros);
  add("bn", ParamRole::kBnMean, {filters}, zeros);
  add("bn", ParamRole::kBnVariance, {filters}, ones);
  add("out", ParamRole::kConvKernel, {1, 1, filters, 2}, wo);
  add("out", ParamRole::kConvBias, {2}, {0.1f, -0.1f});
  reindex_params(g);
  validate(g);
  return g;
}

}  // namespace

TEST_SUITE("compression") {
  TEST_CASE("fold hand example") {
    auto g = pointwise(1, 0.0f);
    g.param("conv", ParamRole::kConvKernel).tensor.f32()[0] = 2.0f;
    g.param("conv", ParamRole::kConvBias).tensor.f32()[0] = 1.0f;
    g.param("bn", ParamRole::kBnGamma).tensor.f32()[0] = 0.5f;
    g.param("bn", ParamRole::kBnVariance).tensor.f32()[0] = 4.0f;
    g.param("bn", ParamRole::kBnMean).tensor.f32()[0] = 1.0f;
    g.param("bn", ParamRole::kBnBeta).tensor.f32()[0] = 0.2f;
    const auto f = fold_bn(g);
    CHECK(f.metadata.folded);
    CHECK(f.layers.size() == 3);
    CHECK(f.param("conv", ParamRole::kConvKernel).tensor.f32()[0] == 0.5f);
    CHECK(f.param("conv", ParamRole::kConvBias).tensor.f32()[0] == doctest::Approx(0.2));
    CHECK(f.pset_count() == 4);
    CHECK(code_of([&] { fold_bn(f); }) == ErrorCode::kState);
  }

  TEST_CASE("fold preserves the toy network") {
    const auto g = toy_model(3);
    const auto f = fold_bn(g);
    const auto x = generate_calibration_set(16, 16, 4, 1, 6, 4).inputs[0];
    const auto a = run_float(g, x), b = run_float(f, x);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.logits.size(); ++i) {
      worst = std::max(worst, static_cast<double>(std::fabs(a.logits.f32()[i] - b.logits.f32()[i])));
    }
    CHECK(worst <= 1e-4);
    CHECK(a.classes == b.classes);
    CHECK(f.metadata.transforms.back().name == "fold_bn");
  }

  TEST_CASE("weight and bias quantization") {
    const auto q = quantize_weights(Tensor::from_f32({3}, {-1.0f, 0.5f, 1.0f}), 1.0);
    CHECK(q.i8()[0] == -127);
    CHECK(q.i8()[1] == 64);  // 63.5 ties to even
    CHECK(q.i8()[2] == 127);
    CHECK(symmetric_weight_params(1.0).scale == doctest::Approx(1.0 / 127.0));
    const std::vector<float> b = {0.25f, -1.0f};
    const auto qb = quantize_bias(b, 0.01);
    CHECK(qb.i32()[0] == 25);
    CHECK(qb.i32()[1] == -100);
    CHECK(round_half_even(2.5) == 2.0);
    CHECK(round_half_even(-2.5) == -2.0);
    CHECK(round_half_even(3.5) == 4.0);
  }

  TEST_CASE("quantize_ptq") {
    const auto g = toy_model(5);
    const auto set = generate_calibration_set(16, 16, 4, 2, 3, 4);
    const auto q = quantize_ptq(g, set.inputs);
    CHECK(q.metadata.quantized);
    CHECK(q.metadata.folded);
    CHECK(serialize_model(q) == serialize_model(quantize_ptq(g, set.inputs)));
    for (const auto& p : q.params) {
      REQUIRE(p.quant.has_value());
      if (is_kernel_role(p.role)) {
        CHECK(p.tensor.encoding() == Encoding::kI8);
        CHECK(p.quant->zero_point == 0);
      } else {
        CHECK(p.tensor.encoding() == Encoding::kI32);
      }
    }
    CHECK(code_of([&] { quantize_ptq(q, set.inputs); }) == ErrorCode::kPrecondition);
    CHECK(code_of([&] { quantize_ptq(g, {}); }) == ErrorCode::kInvalidArgument);
  }

  TEST_CASE("prune keep 1 is the identity") {
    const auto g = toy_model(2);
    PruneOptions o;
    o.keep_fraction = 1.0;
    const auto p = prune_structured(g, o);
    CHECK(model_hash(p) == model_hash(g));
    CHECK(p.metadata.pruned);
  }

  TEST_CASE("prune bookkeeping on a two-filter layer") {
    auto g = pointwise(2, 1e-3f);
    // Filter 0 has the smaller L1 norm and goes.
    g.param("conv", ParamRole::kConvKernel).tensor.f32()[0] = 0.1f;
    g.param("bn", ParamRole::kBnBeta).tensor.f32()[1] = 0.7f;
    PruneOptions o;
    o.keep_fraction = 0.5;
    o.min_filters = 1;
    const auto p = prune_structured(g, o);
    CHECK(p.param("conv", ParamRole::kConvKernel).tensor.shape() == Shape{1, 1, 1, 1});
    CHECK(p.param("conv", ParamRole::kConvKernel).tensor.f32()[0] == 2.0f);
    CHECK(p.param("bn", ParamRole::kBnBeta).tensor.f32()[0] == 0.7f);
    const auto& out = p.param("out", ParamRole::kConvKernel).tensor;
    CHECK(out.shape() == Shape{1, 1, 1, 2});
    CHECK(out.f32()[0] == g.param("out", ParamRole::kConvKernel).tensor.f32()[2]);
    CHECK(out.f32()[1] == g.param("out", ParamRole::kConvKernel).tensor.f32()[3]);
    CHECK(p.layer("conv").filters == 1);
  }

  TEST_CASE("aggressive pruning keeps a valid graph") {
    const auto g = toy_model(2);
    PruneOptions o;
    o.l1_threshold = 1e30;
    o.min_filters = 1;
    const auto p = prune_structured(g, o);
    validate(p);
    std::size_t before = 0, after = 0;
    for (std::size_t i = 0; i < g.layers.size(); ++i) {
      if (g.layers[i].kind == LayerKind::kConv2d || g.layers[i].kind == LayerKind::kConv2dTranspose) {
        before += g.layers[i].filters;
        after += p.layers[i].filters;
      }
    }
    CHECK(static_cast<double>(after) <= 0.1 * static_cast<double>(before));
    const auto x = generate_calibration_set(16, 16, 4, 1, 1, 4).inputs[0];
    CHECK(run_float(p, x).logits.shape() == Shape{1, 16, 16, 4});
    CHECK(code_of([&] { prune_structured(g, PruneOptions{}); }) == ErrorCode::kInvalidArgument);
    o.keep_fraction = 0.5;
    CHECK(code_of([&] { prune_structured(g, o); }) == ErrorCode::kInvalidArgument);
  }

  TEST_CASE("sparse zeroing by magnitude") {
    const auto g = tiny_model();
    std::size_t expect = 0;
    for (const auto& p : g.params) {
      if (p.role != ParamRole::kConvKernel) continue;
      for (float v : p.tensor.f32()) expect += std::fabs(v) < 0.1f;
    }
    const auto r = sparse_zero(g, magnitude_in(0.0, 0.1, {ParamRole::kConvKernel}));
    CHECK(r.zeroed == expect);
    for (const auto& p : r.graph.params) {
      if (p.role != ParamRole::kConvKernel) continue;
      for (float v : p.tensor.f32()) CHECK((v == 0.0f || std::fabs(v) >= 0.1f));
    }
    CHECK(sparse_zero(g, magnitude_in(0.0, 0.1, {ParamRole::kBnGamma})).zeroed == 0);
  }

  TEST_CASE("irrelevant weights can be zeroed without effect") {
    auto g = tiny_model();
    g.param("bn", ParamRole::kBnBeta).tensor.f32()[2] = -1000.0f;  // channel 2 never fires
    const auto set = generate_calibration_set(6, 6, 2, 3, 4, 3);
    const auto r = sparse_zero(g, irrelevant_weights(g, set.inputs));
    CHECK(r.zeroed == 3);  // the three output-conv weights reading channel 2
    for (const auto& x : set.inputs) CHECK(run_float(r.graph, x).logits == run_float(g, x).logits);
  }
}
