#include "seuforge/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "seuforge/error.hpp"
#include "seuforge/quant.hpp"

namespace seuforge {

int MagnitudeHistogram::bin_of(double magnitude) {
  if (!(magnitude > 0.0)) return 0;
  if (std::isinf(magnitude)) return kHistogramBins - 1;
  const int e = std::ilogb(magnitude) - kHistogramMinExponent;
  return std::clamp(e, 0, kHistogramBins - 1);
}

void MagnitudeHistogram::add(double v) {
  if (std::isnan(v)) return;
  if (v == 0.0) {
    ++zeros;
    return;
  }
  auto& side = v > 0.0 ? positive : negative;
  ++side[static_cast<std::size_t>(bin_of(std::fabs(v)))];
}

void MagnitudeHistogram::merge(const MagnitudeHistogram& other) {
  for (int i = 0; i < kHistogramBins; ++i) {
    positive[static_cast<std::size_t>(i)] += other.positive[static_cast<std::size_t>(i)];
    negative[static_cast<std::size_t>(i)] += other.negative[static_cast<std::size_t>(i)];
  }
  zeros += other.zeros;
}

void ValueStats::add(double v) {
  ++count;
  if (std::isnan(v)) {
    ++nan_count;
    return;
  }
  if (v > 0.0) ++positive_count;
  histogram.add(v);
  if (std::isinf(v)) {
    ++inf_count;
    return;
  }
  if (finite_count == 0) {
    min = max = v;
  } else {
    min = std::min(min, v);
    max = std::max(max, v);
  }
  ++finite_count;
}

void ValueStats::merge(const ValueStats& other) {
  if (other.finite_count > 0) {
    if (finite_count == 0) {
      min = other.min;
      max = other.max;
    } else {
      min = std::min(min, other.min);
      max = std::max(max, other.max);
    }
  }
  count += other.count;
  finite_count += other.finite_count;
  nan_count += other.nan_count;
  inf_count += other.inf_count;
  positive_count += other.positive_count;
  histogram.merge(other.histogram);
}

void ActivationTrace::merge(const ActivationTrace& other) {
  if (layers.empty()) {
    *this = other;
    return;
  }
  if (other.layers.size() != layers.size()) fail(ErrorCode::kShapeMismatch, "cannot merge traces of different graphs");
  input.merge(other.input);
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].stats.merge(other.layers[i].stats);
}

namespace {

ValueStats stats_of(const Tensor& t) {
  ValueStats s;
  for (std::size_t i = 0; i < t.size(); ++i) s.add(t.value(i));
  return s;
}

BnParams bn_params_of(const ModelGraph& graph, const LayerSpec& layer) {
  auto vec = [&](ParamRole role) {
    const auto v = graph.param(layer.name, role).tensor.f32();
    return std::vector<float>(v.begin(), v.end());
  };
  BnParams p{vec(ParamRole::kBnGamma), vec(ParamRole::kBnBeta), vec(ParamRole::kBnMean), vec(ParamRole::kBnVariance),
             layer.epsilon};
  return p;
}

const ParamSet& kernel_of(const ModelGraph& g, const LayerSpec& l) {
  return g.param(l.name, l.kind == LayerKind::kConv2dTranspose ? ParamRole::kConvTrKernel : ParamRole::kConvKernel);
}

const ParamSet& bias_of(const ModelGraph& g, const LayerSpec& l) {
  return g.param(l.name, l.kind == LayerKind::kConv2dTranspose ? ParamRole::kConvTrBias : ParamRole::kConvBias);
}

Tensor evaluate_float(const ModelGraph& g, const LayerSpec& l, std::span<const Tensor* const> in) {
  switch (l.kind) {
    case LayerKind::kConv2d:
    case LayerKind::kOutputConv:
      return conv2d_forward(*in[0], kernel_of(g, l).tensor, bias_of(g, l).tensor.f32(), l.stride, l.padding);
    case LayerKind::kConv2dTranspose:
      return conv2d_transpose_forward(*in[0], kernel_of(g, l).tensor, bias_of(g, l).tensor.f32(), l.stride);
    case LayerKind::kBatchNorm: return batchnorm_forward(*in[0], bn_params_of(g, l));
    case LayerKind::kRelu: return relu(*in[0]);
    case LayerKind::kMaxPool: return maxpool2d(*in[0]);
    case LayerKind::kConcat: return concat_channels(*in[0], *in[1]);
  }
  fail(ErrorCode::kUnsupported, "unknown layer kind");
}

bool fused_with_relu(const ModelGraph& g, const LayerSpec& l) {
  const auto cons = g.consumers(l.name);
  return cons.size() == 1 && g.layers[cons[0]].kind == LayerKind::kRelu;
}

const QuantParams& weight_qparams(const ParamSet& p) {
  if (!p.quant) {
    fail(ErrorCode::kFormat, "parameter " + p.layer + "/" + std::string(to_string(p.role)) + " lacks a scale table");
  }
  return *p.quant;
}

Tensor evaluate_quantized(const ModelGraph& g, const LayerSpec& l, std::span<const Tensor* const> in) {
  switch (l.kind) {
    case LayerKind::kConv2d:
    case LayerKind::kOutputConv:
    case LayerKind::kConv2dTranspose: {
      const auto& k = kernel_of(g, l);
      const auto& b = bias_of(g, l);
      const auto& x = activation_qparams(g, l.inputs[0]);
      const auto& y = activation_qparams(g, l.name);
      const double multiplier = weight_qparams(k).scale * x.scale / y.scale;
      (void)weight_qparams(b);
      const std::int32_t clamp_lo = fused_with_relu(g, l) ? y.zero_point : kQMin8;
      if (l.kind == LayerKind::kConv2dTranspose) {
        return quantized_conv2d_transpose(*in[0], x.zero_point, k.tensor, b.tensor, multiplier, y.zero_point,
                                          l.stride, clamp_lo);
      }
      return quantized_conv2d(*in[0], x.zero_point, k.tensor, b.tensor, multiplier, y.zero_point, l.stride,
                              l.padding, clamp_lo);
    }
    case LayerKind::kBatchNorm:
      fail(ErrorCode::kPrecondition, "quantized graphs must be BN-folded; found batch-norm '" + l.name + "'");
    case LayerKind::kRelu: return quantized_relu(*in[0], activation_qparams(g, l.inputs[0]).zero_point);
    case LayerKind::kMaxPool: return quantized_maxpool2d(*in[0]);
    case LayerKind::kConcat: {
      const auto& out = activation_qparams(g, l.name);
      const Tensor a = requantize_tensor(*in[0], activation_qparams(g, l.inputs[0]), out);
      const Tensor b = requantize_tensor(*in[1], activation_qparams(g, l.inputs[1]), out);
      return concat_channels(a, b);
    }
  }
  fail(ErrorCode::kUnsupported, "unknown layer kind");
}

void check_input(const ModelGraph& graph, const Tensor& input) {
  if (input.encoding() != Encoding::kF32 || input.rank() != 4 || input.dim(3) != graph.input_channels) {
    fail(ErrorCode::kShapeMismatch, "input " + shape_to_string(input.shape()) + " (" +
                                        std::string(to_string(input.encoding())) + ") does not match a graph with " +
                                        std::to_string(graph.input_channels) + " f32 input channels");
  }
}

Tensor graph_input(const ModelGraph& graph, const Tensor& input) {
  check_input(graph, input);
  if (!graph.metadata.quantized) return input;
  return quantize_activations(input, activation_qparams(graph, kGraphInput));
}

ClassMap classes_of(const ModelGraph& graph, const Tensor& output) {
  if (!graph.metadata.quantized) return argmax_channels(output);
  return argmax_channels(dequantize_tensor(output, activation_qparams(graph, graph.output_layer().name)));
}

std::vector<Tensor> forward_all(const ModelGraph& graph, const Tensor& x, ActivationTrace* trace) {
  std::vector<Tensor> outputs(graph.layers.size());
  std::vector<const Tensor*> ins;
  for (std::size_t i = 0; i < graph.layers.size(); ++i) {
    const auto& l = graph.layers[i];
    ins.clear();
    for (const auto& name : l.inputs) ins.push_back(name == kGraphInput ? &x : &outputs[graph.layer_index(name)]);
    outputs[i] = evaluate_layer(graph, i, ins);
    if (trace) trace->layers.push_back({l.name, l.kind, stats_of(outputs[i])});
  }
  return outputs;
}

}  // namespace

const QuantParams& activation_qparams(const ModelGraph& graph, std::string_view name) {
  auto it = graph.metadata.activation_quant.find(name);
  if (it == graph.metadata.activation_quant.end()) {
    fail(ErrorCode::kFormat, "quantized graph has no activation table for '" + std::string(name) + "'");
  }
  return it->second;
}

Tensor evaluate_layer(const ModelGraph& graph, std::size_t index, std::span<const Tensor* const> inputs) {
  const auto& l = graph.layers.at(index);
  if (inputs.size() != l.inputs.size()) {
    fail(ErrorCode::kInvalidArgument, "layer '" + l.name + "' evaluated with wrong input count");
  }
  return graph.metadata.quantized ? evaluate_quantized(graph, l, inputs) : evaluate_float(graph, l, inputs);
}

FloatResult run_float(const ModelGraph& graph, const Tensor& input, bool capture) {
  if (graph.metadata.quantized) fail(ErrorCode::kPrecondition, "run_float called on a quantized graph");
  check_input(graph, input);
  FloatResult r;
  ActivationTrace trace;
  if (capture) trace.input = stats_of(input);
  auto outputs = forward_all(graph, input, capture ? &trace : nullptr);
  r.logits = std::move(outputs.back());
  r.classes = argmax_channels(r.logits);
  if (capture) r.trace = std::move(trace);
  return r;
}

QuantizedResult run_quantized(const ModelGraph& graph, const Tensor& input) {
  if (!graph.metadata.quantized) fail(ErrorCode::kPrecondition, "run_quantized needs a quantized graph");
  const Tensor x = graph_input(graph, input);
  auto outputs = forward_all(graph, x, nullptr);
  QuantizedResult r;
  r.logits = dequantize_tensor(outputs.back(), activation_qparams(graph, graph.output_layer().name));
  r.classes = argmax_channels(r.logits);
  return r;
}

ClassMap predict(const ModelGraph& graph, const Tensor& input) {
  return graph.metadata.quantized ? run_quantized(graph, input).classes : run_float(graph, input).classes;
}

std::vector<ParameterStats> capture_parameter_stats(const ModelGraph& graph) {
  std::vector<ParameterStats> out;
  out.reserve(graph.params.size());
  for (const auto& p : graph.params) out.push_back({p.index, p.layer, p.role, p.tensor.encoding(), stats_of(p.tensor)});
  return out;
}

GoldenRun run_golden(const ModelGraph& graph, const Tensor& input) {
  GoldenRun g;
  g.input = graph_input(graph, input);
  g.outputs = forward_all(graph, g.input, nullptr);
  g.classes = classes_of(graph, g.outputs.back());
  return g;
}

namespace {
constexpr std::size_t kInputSlot = std::numeric_limits<std::size_t>::max();

bool all_nan(const Tensor& t) {
  if (t.encoding() != Encoding::kF32) return false;
  const auto v = t.f32();
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isnan(x); });
}
}  // namespace

IncrementalRunner::IncrementalRunner(const ModelGraph& graph, const GoldenRun& golden)
    : graph_(&graph), golden_(&golden), scratch_(graph.layers.size()), dirty_(graph.layers.size(), 0) {
  if (golden.outputs.size() != graph.layers.size()) {
    fail(ErrorCode::kInvalidArgument, "golden run does not belong to this graph");
  }
  input_slots_.resize(graph.layers.size());
  for (std::size_t i = 0; i < graph.layers.size(); ++i) {
    for (const auto& name : graph.layers[i].inputs) {
      input_slots_[i].push_back(name == kGraphInput ? kInputSlot : graph.layer_index(name));
    }
  }
}

ClassMap IncrementalRunner::rerun(std::span<const std::size_t> changed_layers) {
  const auto& g = *graph_;
  const std::size_t count = g.layers.size();
  std::fill(dirty_.begin(), dirty_.end(), 0);
  std::size_t first = count;
  for (auto idx : changed_layers) {
    if (idx >= count) fail(ErrorCode::kOutOfRange, "changed layer index out of range");
    dirty_[idx] = 1;
    first = std::min(first, idx);
  }
  if (first == count) return golden_->classes;
  std::vector<const Tensor*> ins;
  for (std::size_t i = first; i < count; ++i) {
    bool needs = dirty_[i] != 0;
    for (auto s : input_slots_[i]) needs = needs || (s != kInputSlot && dirty_[s]);
    dirty_[i] = 0;
    if (!needs) continue;
    ins.clear();
    for (auto s : input_slots_[i]) {
      if (s == kInputSlot) {
        ins.push_back(&golden_->input);
      } else {
        ins.push_back(dirty_[s] ? &scratch_[s] : &golden_->outputs[s]);
      }
    }
    scratch_[i] = evaluate_layer(g, i, ins);
    if (scratch_[i] == golden_->outputs[i]) continue;
    if (all_nan(scratch_[i])) {
      const auto& gc = golden_->classes;
      return ClassMap{gc.n, gc.h, gc.w, std::vector<std::int32_t>(gc.size(), kInvalidClass)};
    }
    dirty_[i] = 1;
  }
  if (!dirty_[count - 1]) return golden_->classes;
  return classes_of(g, scratch_[count - 1]);
}

}  // namespace seuforge
