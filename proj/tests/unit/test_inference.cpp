#include <cmath>
#include <limits>
#include <random>

#include "../common/toy.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "seuforge/compression.hpp"
#include "seuforge/error.hpp"
#include "seuforge/fault.hpp"
#include "seuforge/inference.hpp"
#include "seuforge/kernels.hpp"

using namespace seuforge;
using seuforge::testing::tiny_model;
using seuforge::testing::toy_model;

namespace {

Tensor image(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
  return generate_calibration_set(h, w, c, 1, seed, 2).inputs[0];
}

}  // namespace

TEST_SUITE("inference") {
  TEST_CASE("tiny model equals a hand composition of kernels") {
    const auto g = tiny_model();
    const auto x = image(6, 5, 2, 1);
    const auto& bn = g.layer("bn");
    BnParams p{{g.param("bn", ParamRole::kBnGamma).tensor.f32().begin(), g.param("bn", ParamRole::kBnGamma).tensor.f32().end()},
               {g.param("bn", ParamRole::kBnBeta).tensor.f32().begin(), g.param("bn", ParamRole::kBnBeta).tensor.f32().end()},
               {g.param("bn", ParamRole::kBnMean).tensor.f32().begin(), g.param("bn", ParamRole::kBnMean).tensor.f32().end()},
               {g.param("bn", ParamRole::kBnVariance).tensor.f32().begin(),
                g.param("bn", ParamRole::kBnVariance).tensor.f32().end()},
               bn.epsilon};
    auto t = conv2d_forward(x, g.param("conv", ParamRole::kConvKernel).tensor,
                            g.param("conv", ParamRole::kConvBias).tensor.f32(), 1, Padding::kSame);
    t = relu(batchnorm_forward(t, p));
    t = conv2d_forward(t, g.param("out", ParamRole::kConvKernel).tensor, g.param("out", ParamRole::kConvBias).tensor.f32(),
                       1, Padding::kSame);
    const auto r = run_float(g, x);
    CHECK(r.logits == t);
    CHECK(r.classes == argmax_channels(t));
  }

  TEST_CASE("repeatable and zero model predicts class 0") {
    const auto g = toy_model(4);
    const auto x = image(16, 16, 4, 2);
    CHECK(run_float(g, x).logits == run_float(g, x).logits);
    auto z = g;
    for (auto& p : z.params) {
      if (p.role != ParamRole::kBnGamma && p.role != ParamRole::kBnVariance) {
        for (auto& v : p.tensor.f32()) v = 0.0f;
      }
    }
    for (auto c : predict(z, x).labels) CHECK(c == 0);
  }

  TEST_CASE("trace covers every layer") {
    const auto g = toy_model(4);
    const auto x = image(16, 16, 4, 3);
    const auto r = run_float(g, x, true);
    REQUIRE(r.trace.has_value());
    CHECK(r.trace->layers.size() == g.layers.size());
    CHECK(r.trace->input.count == x.size());
    const auto& last = r.trace->layers.back().stats;
    for (float v : r.logits.f32()) {
      CHECK(v >= last.min);
      CHECK(v <= last.max);
    }
  }

  TEST_CASE("value stats") {
    ValueStats s;
    for (double v : {1.0, -2.0, 0.0, std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::infinity()}) {
      s.add(v);
    }
    CHECK(s.count == 5);
    CHECK(s.finite_count == 3);
    CHECK(s.nan_count == 1);
    CHECK(s.inf_count == 1);
    CHECK(s.positive_count == 2);
    CHECK(s.min == -2.0);
    CHECK(s.max == 1.0);
    CHECK(s.histogram.zeros == 1);
    CHECK(MagnitudeHistogram::bin_of(1.0) == -kHistogramMinExponent);
    CHECK(MagnitudeHistogram::bin_of(1e-30) == 0);
    CHECK(MagnitudeHistogram::bin_of(1e30) == kHistogramBins - 1);
    ValueStats a, b, all;
    for (int i = 0; i < 10; ++i) {
      (i % 2 ? a : b).add(i - 4.5);
      all.add(i - 4.5);
    }
    a.merge(b);
    CHECK(a == all);
  }

  TEST_CASE("incremental rerun equals a full forward pass") {
    const auto g = toy_model(6);
    const auto x = image(16, 16, 4, 4);
    const auto golden = run_golden(g, x);
    CHECK(golden.classes == predict(g, x));
    ModelGraph work = g;
    IncrementalRunner runner(work, golden);
    std::mt19937_64 gen(17);
    for (int trial = 0; trial < 60; ++trial) {
      const int pset = 1 + static_cast<int>(gen() % static_cast<std::uint64_t>(work.pset_count()));
      const auto& t = work.pset(pset).tensor;
      FaultSpec f{pset, static_cast<std::size_t>(gen() % t.size()), static_cast<int>(gen() % 32), Encoding::kF32, 0};
      FaultInjector inj(work);
      const auto tok = inj.apply(f);
      const std::size_t changed = work.layer_of_pset(pset);
      const auto inc = runner.rerun(std::span(&changed, 1));
      CHECK(inc == predict(work, x));
      inj.revert(tok);
    }
    CHECK(model_hash(work) == model_hash(g));
  }

  TEST_CASE("NaN gamma poisons every pixel") {
    ToyWeightConfig cfg;
    cfg.gamma_min = 1.0;
    cfg.gamma_max = 2.0;
    auto g = toy_model(6, cfg);
    const auto x = image(16, 16, 4, 5);
    const int pset = g.param("bn", ParamRole::kBnGamma).index;
    FaultInjector inj(g);
    inj.apply({pset, 0, 30, Encoding::kF32, 0});
    for (auto c : predict(g, x).labels) CHECK(c == kInvalidClass);
  }

  TEST_CASE("quantized inference") {
    const auto g = toy_model(6);
    const auto set = generate_calibration_set(16, 16, 4, 3, 8, 4);
    const auto q = quantize_ptq(g, set.inputs);
    const auto r = run_quantized(q, set.inputs[0]);
    CHECK(r.classes == predict(q, set.inputs[0]));
    CHECK(r.logits.shape() == Shape{1, 16, 16, 4});
    CHECK(activation_qparams(q, "input").bits == 8);
    CHECK_THROWS_AS(activation_qparams(q, "missing"), Error);
    CHECK_THROWS_AS(run_quantized(g, set.inputs[0]), Error);

    const auto golden = run_golden(q, set.inputs[1]);
    ModelGraph work = q;
    IncrementalRunner runner(work, golden);
    std::mt19937_64 gen(5);
    for (int trial = 0; trial < 30; ++trial) {
      const int pset = 1 + static_cast<int>(gen() % static_cast<std::uint64_t>(work.pset_count()));
      const auto& t = work.pset(pset).tensor;
      FaultSpec f{pset, static_cast<std::size_t>(gen() % t.size()),
                  static_cast<int>(gen() % static_cast<std::uint64_t>(bit_width(t.encoding()))), t.encoding(), 0};
      FaultInjector inj(work);
      const auto tok = inj.apply(f);
      const std::size_t changed = work.layer_of_pset(pset);
      CHECK(runner.rerun(std::span(&changed, 1)) == predict(work, set.inputs[1]));
      inj.revert(tok);
    }
  }

  TEST_CASE("parameter stats") {
    const auto g = toy_model(6);
    const auto stats = capture_parameter_stats(g);
    REQUIRE(stats.size() == g.params.size());
    for (std::size_t i = 0; i < stats.size(); ++i) CHECK(stats[i].stats.count == g.params[i].tensor.size());
  }
}
