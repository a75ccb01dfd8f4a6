#include <benchmark/benchmark.h>

#include "seuforge/compression.hpp"
#include "seuforge/fault.hpp"
#include "seuforge/inference.hpp"
#include "seuforge/kernels.hpp"
#include "seuforge/model.hpp"
#include "seuforge/protection.hpp"
#include "seuforge/rng.hpp"

using namespace seuforge;

namespace {

Tensor noise(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape), Encoding::kF32);
  Rng rng(seed);
  for (auto& v : t.f32()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

const ModelGraph& toy() {
  static const ModelGraph g = generate_toy_weights(build_unet({3, 8, 4, 4, 1e-3f}), 7);
  return g;
}

const CalibrationSet& images() {
  static const CalibrationSet s = generate_calibration_set(64, 64, 4, 4, 1, 4);
  return s;
}

void BM_Conv3x3(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto x = noise({1, 64, 64, c}, 1);
  const auto k = noise({3, 3, c, c}, 2);
  const std::vector<float> b(c, 0.0f);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_forward(x, k, b, 1, Padding::kSame));
  state.SetItemsProcessed(state.iterations() * 64 * 64 * 9 * static_cast<std::int64_t>(c * c));
}
BENCHMARK(BM_Conv3x3)->Arg(8)->Arg(32);

void BM_FlipBit(benchmark::State& state) {
  std::uint32_t p = 0x3F800000u;
  int bit = 0;
  for (auto _ : state) {
    p = flip_bit_f32(p, bit);
    bit = (bit + 7) & 31;
    benchmark::DoNotOptimize(p);
  }
}
BENCHMARK(BM_FlipBit);

void BM_FloatInference(benchmark::State& state) {
  const auto& x = images().inputs[0];
  for (auto _ : state) benchmark::DoNotOptimize(run_float(toy(), x));
}
BENCHMARK(BM_FloatInference)->Unit(benchmark::kMillisecond);

void BM_QuantizedInference(benchmark::State& state) {
  static const ModelGraph q = quantize_ptq(toy(), images().inputs);
  const auto& x = images().inputs[0];
  for (auto _ : state) benchmark::DoNotOptimize(run_quantized(q, x));
}
BENCHMARK(BM_QuantizedInference)->Unit(benchmark::kMillisecond);

void BM_Protect(benchmark::State& state) {
  const auto t = ProtectionTarget::pt(2);
  for (auto _ : state) benchmark::DoNotOptimize(protect_parameters(toy(), t));
}
BENCHMARK(BM_Protect)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
