#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seuforge/kernels.hpp"
#include "seuforge/model.hpp"
#include "seuforge/tensor.hpp"

namespace seuforge {

inline constexpr int kHistogramBins = 64;
/// Bin b holds magnitudes in [2^(b + kHistogramMinExponent), 2^(b + kHistogramMinExponent + 1)),
/// with the outer bins absorbing everything beyond.
inline constexpr int kHistogramMinExponent = -32;

struct MagnitudeHistogram {
  std::array<std::uint64_t, kHistogramBins> positive{};
  std::array<std::uint64_t, kHistogramBins> negative{};
  std::uint64_t zeros = 0;

  static int bin_of(double magnitude);
  void add(double v);
  void merge(const MagnitudeHistogram& other);
  friend bool operator==(const MagnitudeHistogram&, const MagnitudeHistogram&) = default;
};

/// Running census of a value stream. min/max cover finite values only.
struct ValueStats {
  double min = 0.0;
  double max = 0.0;
  std::uint64_t count = 0;
  std::uint64_t finite_count = 0;
  std::uint64_t nan_count = 0;
  std::uint64_t inf_count = 0;
  std::uint64_t positive_count = 0;
  MagnitudeHistogram histogram;

  void add(double v);
  void merge(const ValueStats& other);
  bool has_finite() const { return finite_count > 0; }
  friend bool operator==(const ValueStats&, const ValueStats&) = default;
};

struct LayerTrace {
  std::string name;
  LayerKind kind = LayerKind::kRelu;
  ValueStats stats;
};

/// Per-layer activation ranges of one or more forward passes, in layer order.
struct ActivationTrace {
  ValueStats input;
  std::vector<LayerTrace> layers;

  void merge(const ActivationTrace& other);
};

struct FloatResult {
  Tensor logits;
  ClassMap classes;
  std::optional<ActivationTrace> trace;
};

struct QuantizedResult {
  ClassMap classes;
  /// Output codes dequantized with the output layer's activation table.
  Tensor logits;
};

FloatResult run_float(const ModelGraph& graph, const Tensor& input, bool capture = false);
QuantizedResult run_quantized(const ModelGraph& graph, const Tensor& input);

/// Class map of either mode.
ClassMap predict(const ModelGraph& graph, const Tensor& input);

/// Evaluates layer `index` on already computed inputs (codes for quantized graphs).
Tensor evaluate_layer(const ModelGraph& graph, std::size_t index, std::span<const Tensor* const> inputs);

/// Activation table of a named edge of a quantized graph; kFormat error if absent.
const QuantParams& activation_qparams(const ModelGraph& graph, std::string_view name);

struct ParameterStats {
  int pset = 0;
  std::string layer;
  ParamRole role = ParamRole::kConvKernel;
  Encoding encoding = Encoding::kF32;
  ValueStats stats;
};

/// Exact census of every parameter set (decoded values; integer codes when quantized).
std::vector<ParameterStats> capture_parameter_stats(const ModelGraph& graph);

/// Faultless forward pass with every intermediate output retained.
struct GoldenRun {
  /// Graph-level input as the first layers consume it (f32, or i8 codes).
  Tensor input;
  std::vector<Tensor> outputs;
  ClassMap classes;
};

GoldenRun run_golden(const ModelGraph& graph, const Tensor& input);

/// Re-executes only the layers downstream of changed parameters, reusing the
/// golden outputs everywhere else. The graph is read at rerun() time, so the
/// caller may mutate parameters between calls. A recomputed output that is
/// bit-identical to its golden counterpart stops propagation, and (float
/// mode) an all-NaN intermediate short-cuts to an all-INVALID class map;
/// both shortcuts are exact.
class IncrementalRunner {
 public:
  IncrementalRunner(const ModelGraph& graph, const GoldenRun& golden);

  ClassMap rerun(std::span<const std::size_t> changed_layers);

 private:
  const ModelGraph* graph_;
  const GoldenRun* golden_;
  std::vector<std::vector<std::size_t>> input_slots_;
  std::vector<Tensor> scratch_;
  std::vector<char> dirty_;
};

}  // namespace seuforge
