#include "seuforge/compression.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "seuforge/error.hpp"
#include "seuforge/inference.hpp"
#include "seuforge/quant.hpp"

namespace seuforge {

namespace {

void record(ModelGraph& g, const std::string& name, const nlohmann::ordered_json& params) {
  g.metadata.transforms.push_back({name, params.dump()});
}

void require_float(const ModelGraph& g, const char* op) {
  if (g.metadata.quantized) fail(ErrorCode::kPrecondition, std::string(op) + " needs a float graph");
}

bool is_conv_like(LayerKind k) {
  return k == LayerKind::kConv2d || k == LayerKind::kConv2dTranspose || k == LayerKind::kOutputConv;
}

ParamRole kernel_role(LayerKind k) { return k == LayerKind::kConv2dTranspose ? ParamRole::kConvTrKernel : ParamRole::kConvKernel; }
ParamRole bias_role(LayerKind k) { return k == LayerKind::kConv2dTranspose ? ParamRole::kConvTrBias : ParamRole::kConvBias; }

}  // namespace

ModelGraph fold_bn(const ModelGraph& graph) {
  require_float(graph, "fold_bn");
  if (graph.metadata.folded) fail(ErrorCode::kState, "graph is already BN-folded");
  ModelGraph g = graph;
  std::size_t folded = 0;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    if (g.layers[i].kind != LayerKind::kBatchNorm) continue;
    const LayerSpec bn = g.layers[i];
    const auto producer_idx = bn.inputs[0] == kGraphInput ? std::nullopt : g.find_layer(bn.inputs[0]);
    if (!producer_idx || !is_conv_like(g.layers[*producer_idx].kind)) {
      fail(ErrorCode::kPrecondition, "batch-norm '" + bn.name + "' is not fed by a convolution");
    }
    const LayerSpec conv = g.layers[*producer_idx];
    if (g.consumers(conv.name).size() != 1) {
      fail(ErrorCode::kPrecondition, "convolution '" + conv.name + "' feeds more than its batch-norm");
    }
    const auto gamma = g.param(bn.name, ParamRole::kBnGamma).tensor.f32();
    const auto beta = g.param(bn.name, ParamRole::kBnBeta).tensor.f32();
    const auto mu = g.param(bn.name, ParamRole::kBnMean).tensor.f32();
    const auto sigma = g.param(bn.name, ParamRole::kBnVariance).tensor.f32();
    auto w = g.param(conv.name, kernel_role(conv.kind)).tensor.f32();
    auto b = g.param(conv.name, bias_role(conv.kind)).tensor.f32();
    const std::size_t cout = conv.filters;
    for (std::size_t c = 0; c < cout; ++c) {
      const double s = static_cast<double>(gamma[c]) / std::sqrt(static_cast<double>(sigma[c]) + bn.epsilon);
      for (std::size_t k = c; k < w.size(); k += cout) w[k] = static_cast<float>(w[k] * s);
      b[c] = static_cast<float>(s * (static_cast<double>(b[c]) - mu[c]) + beta[c]);
    }
    for (auto& l : g.layers) {
      for (auto& in : l.inputs) {
        if (in == bn.name) in = conv.name;
      }
    }
    std::erase_if(g.params, [&](const ParamSet& p) { return p.layer == bn.name; });
    g.layers.erase(g.layers.begin() + static_cast<std::ptrdiff_t>(i));
    --i;
    ++folded;
  }
  reindex_params(g);
  g.metadata.folded = true;
  record(g, "fold_bn", {{"layers_folded", folded}});
  validate(g);
  return g;
}

ModelGraph quantize_ptq(const ModelGraph& graph, std::span<const Tensor> calibration) {
  require_float(graph, "quantize_ptq");
  if (calibration.empty()) fail(ErrorCode::kInvalidArgument, "quantize_ptq needs at least one calibration input");
  ModelGraph g = graph.metadata.folded ? graph : fold_bn(graph);

  ActivationTrace trace;
  for (const auto& x : calibration) trace.merge(*run_float(g, x, true).trace);
  auto table_of = [](const ValueStats& s) {
    if (s.nan_count || s.inf_count) fail(ErrorCode::kPrecondition, "calibration produced non-finite activations");
    return activation_params(s.min, s.max);
  };

  auto& act = g.metadata.activation_quant;
  act.clear();
  act[std::string(kGraphInput)] = table_of(trace.input);
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const auto& l = g.layers[i];
    const auto cons = g.consumers(l.name);
    switch (l.kind) {
      case LayerKind::kConv2d:
      case LayerKind::kConv2dTranspose:
      case LayerKind::kOutputConv:
        if (cons.size() == 1 && g.layers[cons[0]].kind == LayerKind::kRelu) {
          act[l.name] = table_of(trace.layers[cons[0]].stats);
        } else {
          act[l.name] = table_of(trace.layers[i].stats);
        }
        break;
      case LayerKind::kRelu:
      case LayerKind::kMaxPool: act[l.name] = act.at(l.inputs[0]); break;
      case LayerKind::kConcat: act[l.name] = table_of(trace.layers[i].stats); break;
      case LayerKind::kBatchNorm: fail(ErrorCode::kPrecondition, "batch-norm survived folding");
    }
  }

  std::vector<std::string> zero_tensors;
  for (const auto& l : g.layers) {
    if (!is_conv_like(l.kind)) continue;
    auto& k = g.param(l.name, kernel_role(l.kind));
    auto& b = g.param(l.name, bias_role(l.kind));
    double max_abs = 0.0;
    for (float v : k.tensor.f32()) {
      if (!std::isfinite(v)) fail(ErrorCode::kPrecondition, "non-finite weight in '" + l.name + "'");
      max_abs = std::max(max_abs, static_cast<double>(std::fabs(v)));
    }
    if (max_abs == 0.0) zero_tensors.push_back(l.name);
    const QuantParams wq = symmetric_weight_params(max_abs);
    const double sx = act.at(l.inputs[0]).scale;
    const QuantParams bq{wq.scale * sx, 0, 32};
    k.tensor = quantize_weights(k.tensor, max_abs);
    k.quant = wq;
    b.tensor = quantize_bias(b.tensor.f32(), bq.scale);
    b.quant = bq;
  }
  g.metadata.quantized = true;
  nlohmann::ordered_json params = {{"calibration_inputs", calibration.size()},
                                   {"weights", "int8 symmetric per-tensor"},
                                   {"biases", "int32, scale S_w*S_x"},
                                   {"activations", "int8 asymmetric min/max"},
                                   {"rounding", "half-even"},
                                   {"concat", "inputs rescaled to the concat table"}};
  if (!zero_tensors.empty()) {
    params["all_zero_kernels_scale_1"] = zero_tensors;
    g.metadata.notes["quantize_ptq.zero_kernels"] = std::to_string(zero_tensors.size()) + " all-zero kernels given S=1";
  }
  record(g, "quantize_ptq", params);
  validate(g);
  return g;
}

namespace {

Tensor slice_last_two(const Tensor& k, const std::vector<std::size_t>& cin_keep, const std::vector<std::size_t>& cout_keep) {
  const std::size_t kh = k.dim(0), kw = k.dim(1), cin = k.dim(2), cout = k.dim(3);
  const auto src = k.f32();
  std::vector<float> out;
  out.reserve(kh * kw * cin_keep.size() * cout_keep.size());
  for (std::size_t s = 0; s < kh * kw; ++s) {
    for (auto ci : cin_keep) {
      for (auto co : cout_keep) out.push_back(src[(s * cin + ci) * cout + co]);
    }
  }
  return Tensor::from_f32({kh, kw, cin_keep.size(), cout_keep.size()}, std::move(out));
}

Tensor slice_vector(const Tensor& v, const std::vector<std::size_t>& keep) {
  const auto src = v.f32();
  std::vector<float> out;
  out.reserve(keep.size());
  for (auto i : keep) out.push_back(src[i]);
  return Tensor::from_f32({keep.size()}, std::move(out));
}

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

}  // namespace

ModelGraph prune_structured(const ModelGraph& graph, const PruneOptions& options) {
  require_float(graph, "prune_structured");
  if (options.keep_fraction.has_value() == options.l1_threshold.has_value()) {
    fail(ErrorCode::kInvalidArgument, "give exactly one of keep_fraction or l1_threshold");
  }
  if (options.keep_fraction && !(*options.keep_fraction > 0.0 && *options.keep_fraction <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, "keep_fraction must lie in (0, 1]");
  }
  if (options.min_filters < 1) fail(ErrorCode::kInvalidArgument, "min_filters must be at least 1");
  ModelGraph g = graph;
  const auto channels = infer_channels(graph);
  std::vector<std::vector<std::size_t>> kept(g.layers.size());
  auto kept_of = [&](const std::string& name) -> std::vector<std::size_t> {
    if (name == kGraphInput) return iota_n(g.input_channels);
    return kept[g.layer_index(name)];
  };
  std::size_t filters_before = 0, filters_after = 0;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const auto& l = g.layers[i];
    switch (l.kind) {
      case LayerKind::kConv2d:
      case LayerKind::kConv2dTranspose: {
        const auto w = graph.param(l.name, kernel_role(l.kind)).tensor.f32();
        std::vector<double> norm(l.filters, 0.0);
        for (std::size_t k = 0; k < w.size(); ++k) norm[k % l.filters] += std::fabs(static_cast<double>(w[k]));
        std::size_t keep = 0;
        if (options.keep_fraction) {
          keep = static_cast<std::size_t>(std::llround(*options.keep_fraction * static_cast<double>(l.filters)));
        } else {
          keep = static_cast<std::size_t>(
              std::count_if(norm.begin(), norm.end(), [&](double n) { return n >= *options.l1_threshold; }));
        }
        keep = std::min(l.filters, std::max(keep, options.min_filters));
        auto order = iota_n(l.filters);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return norm[a] > norm[b]; });
        order.resize(keep);
        std::sort(order.begin(), order.end());
        kept[i] = order;
        filters_before += l.filters;
        filters_after += keep;
        break;
      }
      case LayerKind::kOutputConv: kept[i] = iota_n(l.filters); break;
      case LayerKind::kConcat: {
        kept[i] = kept_of(l.inputs[0]);
        const std::size_t offset =
            l.inputs[0] == kGraphInput ? g.input_channels : channels[g.layer_index(l.inputs[0])];
        for (auto c : kept_of(l.inputs[1])) kept[i].push_back(c + offset);
        break;
      }
      default: kept[i] = kept_of(l.inputs[0]); break;
    }
  }
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    auto& l = g.layers[i];
    if (is_conv_like(l.kind)) {
      const auto cin_keep = kept_of(l.inputs[0]);
      auto& k = g.param(l.name, kernel_role(l.kind));
      auto& b = g.param(l.name, bias_role(l.kind));
      k.tensor = slice_last_two(k.tensor, cin_keep, kept[i]);
      b.tensor = slice_vector(b.tensor, kept[i]);
      l.filters = kept[i].size();
    } else if (l.kind == LayerKind::kBatchNorm) {
      const auto cin_keep = kept_of(l.inputs[0]);
      for (auto role : roles_for(l.kind)) {
        auto& p = g.param(l.name, role);
        p.tensor = slice_vector(p.tensor, cin_keep);
      }
    }
  }
  g.metadata.pruned = true;
  nlohmann::ordered_json params = {{"criterion", "filter L1 norm, single pass (stand-in for an iterative schedule)"},
                                   {"min_filters", options.min_filters},
                                   {"filters_before", filters_before},
                                   {"filters_after", filters_after}};
  if (options.keep_fraction) params["keep_fraction"] = *options.keep_fraction;
  if (options.l1_threshold) params["l1_threshold"] = *options.l1_threshold;
  record(g, "prune_structured", params);
  g.metadata.notes["prune_structured.criterion"] = "single-pass filter L1 norm stand-in";
  validate(g);
  return g;
}

SparseZeroResult sparse_zero(const ModelGraph& graph, const ParamPredicate& predicate) {
  require_float(graph, "sparse_zero");
  SparseZeroResult r{graph, 0};
  for (auto& p : r.graph.params) {
    auto v = p.tensor.f32();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (predicate(p, i, v[i])) {
        v[i] = 0.0f;
        ++r.zeroed;
      }
    }
  }
  record(r.graph, "sparse_zero", {{"zeroed", r.zeroed}});
  return r;
}

ParamPredicate magnitude_in(double lo, double hi, std::vector<ParamRole> roles) {
  return [lo, hi, roles = std::move(roles)](const ParamSet& set, std::size_t, float value) {
    if (!roles.empty() && std::find(roles.begin(), roles.end(), set.role) == roles.end()) return false;
    const double a = std::fabs(static_cast<double>(value));
    return a >= lo && a < hi;
  };
}

ParamPredicate irrelevant_weights(const ModelGraph& graph, std::span<const Tensor> witnesses) {
  require_float(graph, "irrelevant_weights");
  // dead[layer][c]: channel c of the layer's input never leaves exactly zero.
  std::map<std::string, std::vector<char>, std::less<>> dead;
  for (const auto& l : graph.layers) {
    if (!is_conv_like(l.kind)) continue;
    std::size_t cin = graph.param(l.name, kernel_role(l.kind)).tensor.dim(2);
    dead[l.name] = std::vector<char>(cin, 1);
  }
  for (const auto& x : witnesses) {
    const GoldenRun run = run_golden(graph, x);
    for (const auto& l : graph.layers) {
      if (!is_conv_like(l.kind)) continue;
      const Tensor& in = l.inputs[0] == kGraphInput ? run.input : run.outputs[graph.layer_index(l.inputs[0])];
      const auto v = in.f32();
      auto& d = dead[l.name];
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] != 0.0f) d[i % d.size()] = 0;
      }
    }
  }
  return [dead = std::move(dead)](const ParamSet& set, std::size_t element, float) {
    if (!is_kernel_role(set.role)) return false;
    const auto it = dead.find(set.layer);
    if (it == dead.end()) return false;
    const std::size_t cin = set.tensor.dim(2), cout = set.tensor.dim(3);
    return it->second[(element / cout) % cin] != 0;
  };
}

}  // namespace seuforge
