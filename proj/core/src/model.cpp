#include "seuforge/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "seuforge/error.hpp"
#include "seuforge/inference.hpp"
#include "seuforge/rng.hpp"

namespace seuforge {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kConv2dTranspose: return "conv2d_transpose";
    case LayerKind::kBatchNorm: return "batchnorm";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kConcat: return "concat";
    case LayerKind::kOutputConv: return "output_conv";
  }
  return "?";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (auto k : {LayerKind::kConv2d, LayerKind::kConv2dTranspose, LayerKind::kBatchNorm, LayerKind::kRelu,
                 LayerKind::kMaxPool, LayerKind::kConcat, LayerKind::kOutputConv}) {
    if (to_string(k) == name) return k;
  }
  fail(ErrorCode::kFormat, "unknown layer kind '" + std::string(name) + "'");
}

std::string_view to_string(ParamRole role) {
  switch (role) {
    case ParamRole::kConvKernel: return "conv_kernel";
    case ParamRole::kConvBias: return "conv_bias";
    case ParamRole::kConvTrKernel: return "convtr_kernel";
    case ParamRole::kConvTrBias: return "convtr_bias";
    case ParamRole::kBnGamma: return "bn_gamma";
    case ParamRole::kBnBeta: return "bn_beta";
    case ParamRole::kBnMean: return "bn_mu";
    case ParamRole::kBnVariance: return "bn_sigma";
  }
  return "?";
}

ParamRole param_role_from_string(std::string_view name) {
  for (auto r : {ParamRole::kConvKernel, ParamRole::kConvBias, ParamRole::kConvTrKernel, ParamRole::kConvTrBias,
                 ParamRole::kBnGamma, ParamRole::kBnBeta, ParamRole::kBnMean, ParamRole::kBnVariance}) {
    if (to_string(r) == name) return r;
  }
  fail(ErrorCode::kInvalidArgument, "unknown parameter role '" + std::string(name) + "'");
}

bool is_bias_role(ParamRole role) {
  return role == ParamRole::kConvBias || role == ParamRole::kConvTrBias || role == ParamRole::kBnBeta;
}

bool is_kernel_role(ParamRole role) { return role == ParamRole::kConvKernel || role == ParamRole::kConvTrKernel; }

std::vector<ParamRole> roles_for(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2d:
    case LayerKind::kOutputConv: return {ParamRole::kConvKernel, ParamRole::kConvBias};
    case LayerKind::kConv2dTranspose: return {ParamRole::kConvTrKernel, ParamRole::kConvTrBias};
    case LayerKind::kBatchNorm:
      return {ParamRole::kBnGamma, ParamRole::kBnBeta, ParamRole::kBnMean, ParamRole::kBnVariance};
    default: return {};
  }
}

std::optional<std::size_t> ModelGraph::find_layer(std::string_view name) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t ModelGraph::layer_index(std::string_view name) const {
  auto idx = find_layer(name);
  if (!idx) fail(ErrorCode::kInvalidArgument, "no layer named '" + std::string(name) + "'");
  return *idx;
}

const LayerSpec& ModelGraph::layer(std::string_view name) const { return layers[layer_index(name)]; }

ParamSet* ModelGraph::find_param(std::string_view layer_name, ParamRole role) {
  for (auto& p : params) {
    if (p.layer == layer_name && p.role == role) return &p;
  }
  return nullptr;
}

const ParamSet* ModelGraph::find_param(std::string_view layer_name, ParamRole role) const {
  for (const auto& p : params) {
    if (p.layer == layer_name && p.role == role) return &p;
  }
  return nullptr;
}

ParamSet& ModelGraph::param(std::string_view layer_name, ParamRole role) {
  if (auto* p = find_param(layer_name, role)) return *p;
  fail(ErrorCode::kInvalidArgument,
       "layer '" + std::string(layer_name) + "' has no " + std::string(to_string(role)) + " parameters");
}

const ParamSet& ModelGraph::param(std::string_view layer_name, ParamRole role) const {
  if (const auto* p = find_param(layer_name, role)) return *p;
  fail(ErrorCode::kInvalidArgument,
       "layer '" + std::string(layer_name) + "' has no " + std::string(to_string(role)) + " parameters");
}

ParamSet& ModelGraph::pset(int index) {
  if (index < 1 || index > pset_count()) {
    fail(ErrorCode::kOutOfRange, "p-index " + std::to_string(index) + " outside 1.." + std::to_string(pset_count()));
  }
  return params[static_cast<std::size_t>(index - 1)];
}

const ParamSet& ModelGraph::pset(int index) const {
  if (index < 1 || index > pset_count()) {
    fail(ErrorCode::kOutOfRange, "p-index " + std::to_string(index) + " outside 1.." + std::to_string(pset_count()));
  }
  return params[static_cast<std::size_t>(index - 1)];
}

std::size_t ModelGraph::layer_of_pset(int index) const { return layer_index(pset(index).layer); }

std::size_t ModelGraph::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.size();
  return n;
}

std::vector<std::size_t> ModelGraph::consumers(std::string_view name) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (const auto& in : layers[i].inputs) {
      if (in == name) {
        out.push_back(i);
        break;
      }
    }
  }
  return out;
}

void reindex_params(ModelGraph& graph) {
  std::vector<ParamSet> ordered;
  ordered.reserve(graph.params.size());
  for (const auto& layer : graph.layers) {
    for (auto role : roles_for(layer.kind)) {
      auto it = std::find_if(graph.params.begin(), graph.params.end(),
                             [&](const ParamSet& p) { return p.layer == layer.name && p.role == role; });
      if (it == graph.params.end()) continue;
      ordered.push_back(std::move(*it));
      graph.params.erase(it);
    }
  }
  if (!graph.params.empty()) {
    fail(ErrorCode::kPrecondition, "parameter set '" + graph.params.front().layer + "/" +
                                       std::string(to_string(graph.params.front().role)) +
                                       "' belongs to no layer");
  }
  for (std::size_t i = 0; i < ordered.size(); ++i) ordered[i].index = static_cast<int>(i + 1);
  graph.params = std::move(ordered);
}

std::vector<std::size_t> infer_channels(const ModelGraph& graph) {
  std::vector<std::size_t> channels(graph.layers.size());
  auto channels_of = [&](const std::string& name, std::size_t upto) -> std::size_t {
    if (name == kGraphInput) return graph.input_channels;
    for (std::size_t j = 0; j < upto; ++j) {
      if (graph.layers[j].name == name) return channels[j];
    }
    fail(ErrorCode::kPrecondition, "layer input '" + name + "' is not produced before its use");
  };
  for (std::size_t i = 0; i < graph.layers.size(); ++i) {
    const auto& l = graph.layers[i];
    const std::size_t expected_inputs = l.kind == LayerKind::kConcat ? 2 : 1;
    if (l.inputs.size() != expected_inputs) {
      fail(ErrorCode::kPrecondition, "layer '" + l.name + "' (" + std::string(to_string(l.kind)) + ") needs " +
                                         std::to_string(expected_inputs) + " inputs, has " +
                                         std::to_string(l.inputs.size()));
    }
    switch (l.kind) {
      case LayerKind::kConv2d:
      case LayerKind::kConv2dTranspose:
      case LayerKind::kOutputConv: channels[i] = l.filters; break;
      case LayerKind::kConcat: channels[i] = channels_of(l.inputs[0], i) + channels_of(l.inputs[1], i); break;
      default: channels[i] = channels_of(l.inputs[0], i); break;
    }
  }
  return channels;
}

namespace {

std::size_t input_channels_of(const ModelGraph& g, const std::vector<std::size_t>& channels, const LayerSpec& l) {
  if (l.inputs[0] == kGraphInput) return g.input_channels;
  return channels[g.layer_index(l.inputs[0])];
}

Shape expected_param_shape(const LayerSpec& l, ParamRole role, std::size_t cin) {
  switch (role) {
    case ParamRole::kConvKernel:
    case ParamRole::kConvTrKernel: return {l.kernel, l.kernel, cin, l.filters};
    case ParamRole::kConvBias:
    case ParamRole::kConvTrBias: return {l.filters};
    default: return {cin};
  }
}

}  // namespace

void validate(const ModelGraph& graph) {
  if (graph.layers.empty()) fail(ErrorCode::kPrecondition, "graph has no layers");
  if (graph.input_channels == 0) fail(ErrorCode::kPrecondition, "graph input channel count must be positive");
  std::set<std::string, std::less<>> names;
  for (const auto& l : graph.layers) {
    if (l.name.empty() || l.name == kGraphInput) fail(ErrorCode::kPrecondition, "invalid layer name '" + l.name + "'");
    if (!names.insert(l.name).second) fail(ErrorCode::kPrecondition, "duplicate layer name '" + l.name + "'");
  }
  const auto channels = infer_channels(graph);
  for (std::size_t i = 0; i + 1 < graph.layers.size(); ++i) {
    if (graph.consumers(graph.layers[i].name).empty()) {
      fail(ErrorCode::kPrecondition, "layer '" + graph.layers[i].name + "' feeds nothing; graph must have one output");
    }
  }
  const auto& out = graph.output_layer();
  if (channels.back() != graph.class_count) {
    fail(ErrorCode::kPrecondition, "output layer '" + out.name + "' yields " + std::to_string(channels.back()) +
                                       " channels, class_count is " + std::to_string(graph.class_count));
  }
  for (const auto& l : graph.layers) {
    const bool conv_like =
        l.kind == LayerKind::kConv2d || l.kind == LayerKind::kConv2dTranspose || l.kind == LayerKind::kOutputConv;
    if (conv_like && (l.kernel == 0 || l.filters == 0 || l.stride == 0)) {
      fail(ErrorCode::kPrecondition, "layer '" + l.name + "' needs positive kernel, stride and filter count");
    }
    if (l.kind == LayerKind::kConv2dTranspose && l.stride != l.kernel) {
      fail(ErrorCode::kUnsupported, "transposed conv '" + l.name + "' needs stride == kernel");
    }
    const std::size_t cin = input_channels_of(graph, channels, l);
    for (auto role : roles_for(l.kind)) {
      const auto* p = graph.find_param(l.name, role);
      if (!p) {
        fail(ErrorCode::kPrecondition,
             "layer '" + l.name + "' lacks its " + std::string(to_string(role)) + " parameter set");
      }
      const Shape want = expected_param_shape(l, role, cin);
      if (p->tensor.shape() != want) {
        fail(ErrorCode::kShapeMismatch, "parameter " + l.name + "/" + std::string(to_string(role)) + " has shape " +
                                            shape_to_string(p->tensor.shape()) + ", expected " +
                                            shape_to_string(want));
      }
      if (graph.metadata.quantized && !p->quant) {
        fail(ErrorCode::kPrecondition, "quantized graph parameter " + l.name + "/" +
                                           std::string(to_string(role)) + " has no quantization table");
      }
    }
  }
  std::size_t owned = 0;
  for (const auto& l : graph.layers) owned += roles_for(l.kind).size();
  if (owned != graph.params.size()) fail(ErrorCode::kPrecondition, "graph carries parameter sets owned by no layer");
  for (std::size_t i = 0; i < graph.params.size(); ++i) {
    if (graph.params[i].index != static_cast<int>(i + 1)) {
      fail(ErrorCode::kPrecondition, "p-indices are not contiguous in layer order");
    }
  }
}

std::vector<Shape> infer_shapes(const ModelGraph& graph, const Shape& input_shape) {
  if (input_shape.size() != 4 || input_shape[3] != graph.input_channels) {
    fail(ErrorCode::kShapeMismatch, "input shape " + shape_to_string(input_shape) + " does not match a graph with " +
                                        std::to_string(graph.input_channels) + " input channels");
  }
  const auto channels = infer_channels(graph);
  std::vector<Shape> shapes(graph.layers.size());
  auto shape_of = [&](const std::string& name) -> const Shape& {
    if (name == kGraphInput) return input_shape;
    return shapes[graph.layer_index(name)];
  };
  for (std::size_t i = 0; i < graph.layers.size(); ++i) {
    const auto& l = graph.layers[i];
    const Shape& in = shape_of(l.inputs[0]);
    Shape out = in;
    switch (l.kind) {
      case LayerKind::kConv2d:
      case LayerKind::kOutputConv:
        out = {in[0], conv_output_extent(in[1], l.kernel, l.stride, l.padding),
               conv_output_extent(in[2], l.kernel, l.stride, l.padding), l.filters};
        break;
      case LayerKind::kConv2dTranspose: out = {in[0], in[1] * l.stride, in[2] * l.stride, l.filters}; break;
      case LayerKind::kMaxPool:
        if (in[1] % 2 || in[2] % 2) {
          fail(ErrorCode::kShapeMismatch, "max-pool '" + l.name + "' receives odd extents " + shape_to_string(in));
        }
        out = {in[0], in[1] / 2, in[2] / 2, in[3]};
        break;
      case LayerKind::kConcat: {
        const Shape& other = shape_of(l.inputs[1]);
        if (other[0] != in[0] || other[1] != in[1] || other[2] != in[2]) {
          fail(ErrorCode::kShapeMismatch, "concat '" + l.name + "' joins " + shape_to_string(in) + " and " +
                                              shape_to_string(other));
        }
        out = {in[0], in[1], in[2], channels[i]};
        break;
      }
      default: break;
    }
    shapes[i] = out;
  }
  return shapes;
}

namespace {

struct UnetBuilder {
  ModelGraph g;
  std::size_t conv_count = 0, bn_count = 0, relu_count = 0, pool_count = 0, tr_count = 0, cat_count = 0;
  float epsilon = 1e-3f;

  static std::string numbered(const std::string& base, std::size_t n) {
    return n == 0 ? base : base + "_" + std::to_string(n);
  }

  std::string add(LayerSpec spec) {
    std::string name = spec.name;
    g.layers.push_back(std::move(spec));
    return name;
  }

  void add_params(const LayerSpec& l, std::size_t cin) {
    for (auto role : roles_for(l.kind)) {
      ParamSet p;
      p.layer = l.name;
      p.role = role;
      const Shape shape = expected_param_shape(l, role, cin);
      p.tensor = Tensor(shape, Encoding::kF32);
      if (role == ParamRole::kBnGamma || role == ParamRole::kBnVariance) {
        for (auto& v : p.tensor.f32()) v = 1.0f;
      }
      g.params.push_back(std::move(p));
    }
  }

  std::string conv(const std::string& input, std::size_t cin, std::size_t filters) {
    LayerSpec l{LayerKind::kConv2d, numbered("conv2D", conv_count++), {input}, 3, 1, Padding::kSame, filters, epsilon};
    add_params(l, cin);
    return add(l);
  }

  std::string block(const std::string& input, std::size_t cin, std::size_t filters) {
    auto c = conv(input, cin, filters);
    LayerSpec bn{LayerKind::kBatchNorm, numbered("bn", bn_count++), {c}, 0, 1, Padding::kSame, 0, epsilon};
    add_params(bn, filters);
    add(bn);
    LayerSpec r{LayerKind::kRelu, numbered("relu", relu_count++), {bn.name}};
    return add(r);
  }
};

}  // namespace

ModelGraph build_unet(const UnetConfig& config) {
  if (config.levels < 2) fail(ErrorCode::kInvalidArgument, "U-Net needs at least 2 levels");
  if (config.base_filters < 2) fail(ErrorCode::kInvalidArgument, "U-Net needs at least 2 base filters");
  if (config.class_count < 1 || config.input_channels < 1) {
    fail(ErrorCode::kInvalidArgument, "class and input channel counts must be positive");
  }
  UnetBuilder b;
  b.epsilon = config.epsilon;
  b.g.input_channels = config.input_channels;
  b.g.class_count = config.class_count;

  std::string x(kGraphInput);
  std::size_t cin = config.input_channels;
  std::size_t filters = config.base_filters;
  std::vector<std::pair<std::string, std::size_t>> skips;
  for (std::size_t level = 0; level < config.levels; ++level) {
    x = b.block(x, cin, filters);
    x = b.block(x, filters, filters);
    skips.emplace_back(x, filters);
    LayerSpec pool{LayerKind::kMaxPool, UnetBuilder::numbered("maxpool", b.pool_count++), {x}};
    x = b.add(pool);
    cin = filters;
    filters *= 2;
  }
  x = b.block(x, cin, filters);
  x = b.block(x, filters, filters);
  cin = filters;
  for (auto it = skips.rbegin(); it != skips.rend(); ++it) {
    const auto [skip, f] = *it;
    LayerSpec up{LayerKind::kConv2dTranspose, UnetBuilder::numbered("conv2Dtr", b.tr_count++), {x}, 2, 2,
                 Padding::kValid, f};
    b.add_params(up, cin);
    x = b.add(up);
    LayerSpec cat{LayerKind::kConcat, UnetBuilder::numbered("concat", b.cat_count++), {x, skip}};
    x = b.add(cat);
    x = b.block(x, 2 * f, f);
    x = b.block(x, f, f);
    cin = f;
  }
  LayerSpec out{LayerKind::kOutputConv, UnetBuilder::numbered("conv2D", b.conv_count++), {x}, 1, 1, Padding::kSame,
                config.class_count};
  b.add_params(out, cin);
  b.add(out);

  reindex_params(b.g);
  std::ostringstream prov;
  prov << "build_unet(levels=" << config.levels << ",base_filters=" << config.base_filters
       << ",class_count=" << config.class_count << ",input_channels=" << config.input_channels << ")";
  b.g.metadata.provenance = prov.str();
  validate(b.g);
  return std::move(b.g);
}

namespace {

struct ChannelStats {
  std::vector<double> mean, stddev;
};

ChannelStats channel_stats(const Tensor& t) {
  const Nhwc s = nhwc_of(t);
  ChannelStats st{std::vector<double>(s.c, 0.0), std::vector<double>(s.c, 0.0)};
  const auto x = t.f32();
  const double count = static_cast<double>(x.size() / s.c);
  for (std::size_t i = 0; i < x.size(); ++i) st.mean[i % s.c] += x[i];
  for (auto& m : st.mean) m /= count;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - st.mean[i % s.c];
    st.stddev[i % s.c] += d * d;
  }
  for (auto& v : st.stddev) v = std::sqrt(v / count);
  return st;
}

void scale_filter(ModelGraph& g, const LayerSpec& l, std::size_t filter, double factor, bool include_bias) {
  const ParamRole kernel_role = l.kind == LayerKind::kConv2dTranspose ? ParamRole::kConvTrKernel : ParamRole::kConvKernel;
  const ParamRole bias_role = l.kind == LayerKind::kConv2dTranspose ? ParamRole::kConvTrBias : ParamRole::kConvBias;
  auto k = g.param(l.name, kernel_role).tensor.f32();
  for (std::size_t i = filter; i < k.size(); i += l.filters) k[i] = static_cast<float>(k[i] * factor);
  if (include_bias) {
    auto b = g.param(l.name, bias_role).tensor.f32();
    b[filter] = static_cast<float>(b[filter] * factor);
  }
}

double fraction_for(const ToyWeightConfig& cfg, const std::string& layer) {
  auto it = cfg.layer_positive_fraction.find(layer);
  return it == cfg.layer_positive_fraction.end() ? cfg.positive_bias_fraction : it->second;
}

float signed_magnitude(Rng& rng, double lo, double hi, double positive_fraction) {
  const double mag = rng.uniform(lo, hi);
  return static_cast<float>(rng.bernoulli(positive_fraction) ? mag : -mag);
}

}  // namespace

ModelGraph generate_toy_weights(const ModelGraph& graph, std::uint64_t seed, const ToyWeightConfig& config) {
  if (graph.metadata.quantized) fail(ErrorCode::kPrecondition, "cannot regenerate weights of a quantized graph");
  ModelGraph g = graph;
  Rng rng(seed);
  const auto channels = infer_channels(g);

  // Which conv feeds which BN, for sign and statistic coupling.
  std::map<std::string, std::string, std::less<>> bn_producer;
  for (const auto& l : g.layers) {
    if (l.kind == LayerKind::kBatchNorm) bn_producer[l.name] = l.inputs[0];
  }

  for (auto& p : g.params) {
    const auto& l = g.layer(p.layer);
    auto v = p.tensor.f32();
    switch (p.role) {
      case ParamRole::kConvKernel:
      case ParamRole::kConvTrKernel: {
        const double fan_in = static_cast<double>(p.tensor.dim(0) * p.tensor.dim(1) * p.tensor.dim(2));
        const double bound = config.kernel_gain * std::sqrt(3.0 / fan_in);
        for (auto& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
        break;
      }
      case ParamRole::kConvBias:
      case ParamRole::kConvTrBias: {
        const bool output = l.kind == LayerKind::kOutputConv;
        const double hi = output ? config.output_bias_max : config.bias_max;
        for (auto& x : v) {
          if (config.distribution == WeightDistribution::kUniform) {
            x = static_cast<float>(rng.uniform(-hi, hi));
          } else {
            x = signed_magnitude(rng, config.bias_min, hi, fraction_for(config, l.name));
          }
        }
        break;
      }
      case ParamRole::kBnGamma:
        for (auto& x : v) x = static_cast<float>(rng.uniform(config.gamma_min, config.gamma_max));
        break;
      case ParamRole::kBnBeta: {
        const double frac = fraction_for(config, bn_producer[l.name]);
        for (auto& x : v) {
          if (config.distribution == WeightDistribution::kUniform) {
            x = static_cast<float>(rng.uniform(-config.beta_max, config.beta_max));
          } else {
            x = signed_magnitude(rng, config.bias_min, config.beta_max, frac);
          }
        }
        break;
      }
      case ParamRole::kBnMean:
        for (auto& x : v) x = static_cast<float>(rng.uniform(-config.mean_offset, config.mean_offset));
        break;
      case ParamRole::kBnVariance:
        for (auto& x : v) x = static_cast<float>(rng.uniform(config.sigma_min, config.sigma_max));
        break;
    }
  }

  if (config.normalize) {
    std::size_t pools = 0;
    for (const auto& l : g.layers) pools += l.kind == LayerKind::kMaxPool;
    // At least 8x8 samples per channel at the bottleneck where affordable.
    const std::size_t extent = std::clamp<std::size_t>(std::size_t{8} << std::min<std::size_t>(pools, 8), 16, 64);
    const auto probe = generate_calibration_set(extent, extent, g.input_channels, 1, mix_seed(seed, 0x70be), g.class_count);
    std::vector<Tensor> outputs(g.layers.size());
    auto input_of = [&](const std::string& name) -> const Tensor& {
      if (name == kGraphInput) return probe.inputs[0];
      return outputs[g.layer_index(name)];
    };
    for (std::size_t i = 0; i < g.layers.size(); ++i) {
      const LayerSpec l = g.layers[i];
      std::vector<const Tensor*> ins;
      for (const auto& n : l.inputs) ins.push_back(&input_of(n));
      const bool conv_like =
          l.kind == LayerKind::kConv2d || l.kind == LayerKind::kConv2dTranspose || l.kind == LayerKind::kOutputConv;
      if (conv_like) {
        Tensor raw = evaluate_layer(g, i, ins);
        const auto stats = channel_stats(raw);
        const auto cons = g.consumers(l.name);
        const bool feeds_bn = cons.size() == 1 && g.layers[cons[0]].kind == LayerKind::kBatchNorm;
        for (std::size_t c = 0; c < l.filters; ++c) {
          const double sd = stats.stddev[c];
          if (!(sd > 0.0)) continue;
          if (feeds_bn) {
            const auto& bn = g.layers[cons[0]];
            const double var = g.param(bn.name, ParamRole::kBnVariance).tensor.f32()[c];
            const double factor = std::sqrt(var) / sd;
            scale_filter(g, l, c, factor, true);
            auto mu = g.param(bn.name, ParamRole::kBnMean).tensor.f32();
            // Offset drawn earlier in [-mean_offset, mean_offset) becomes a shift in std units.
            mu[c] = static_cast<float>(stats.mean[c] * factor + mu[c] * std::sqrt(var));
          } else if (l.kind == LayerKind::kOutputConv) {
            scale_filter(g, l, c, config.logit_scale / sd, false);
          } else {
            scale_filter(g, l, c, 1.0 / sd, true);
          }
        }
      }
      outputs[i] = evaluate_layer(g, i, ins);
    }
    g.metadata.notes["toy_weights.normalized"] = "probe-normalized filters";
  }

  g.metadata.seed = seed;
  g.metadata.prng = std::string(Rng::kAlgorithm);
  std::ostringstream prov;
  prov << "generate_toy_weights(seed=" << seed << ",distribution="
       << (config.distribution == WeightDistribution::kUniform ? "uniform" : "mixed-sign-biases")
       << ",positive_bias_fraction=" << config.positive_bias_fraction << ")";
  g.metadata.provenance = graph.metadata.provenance.empty() ? prov.str() : graph.metadata.provenance + ";" + prov.str();
  (void)channels;
  return g;
}

CalibrationSet generate_calibration_set(std::size_t height, std::size_t width, std::size_t channels,
                                        std::size_t count, std::uint64_t seed, std::size_t class_count) {
  if (height == 0 || width == 0 || channels == 0 || class_count == 0) {
    fail(ErrorCode::kInvalidArgument, "calibration set extents and class count must be positive");
  }
  CalibrationSet set;
  const std::size_t plane = height * width;
  for (std::size_t img = 0; img < count; ++img) {
    Rng rng(mix_seed(seed, img));
    std::vector<float> data(plane * channels);
    std::vector<double> field(plane), tmp(plane);
    for (std::size_t c = 0; c < channels; ++c) {
      for (auto& v : field) v = rng.normal();
      // Three periodic 5-tap box passes per axis: a cheap low-pass.
      constexpr int kRadius = 2;
      for (int pass = 0; pass < 3; ++pass) {
        for (std::size_t y = 0; y < height; ++y) {
          for (std::size_t x = 0; x < width; ++x) {
            double s = 0.0;
            for (int d = -kRadius; d <= kRadius; ++d) {
              const std::size_t xx = (x + width + static_cast<std::size_t>(d + static_cast<int>(width))) % width;
              s += field[y * width + xx];
            }
            tmp[y * width + x] = s / (2 * kRadius + 1);
          }
        }
        for (std::size_t y = 0; y < height; ++y) {
          for (std::size_t x = 0; x < width; ++x) {
            double s = 0.0;
            for (int d = -kRadius; d <= kRadius; ++d) {
              const std::size_t yy = (y + height + static_cast<std::size_t>(d + static_cast<int>(height))) % height;
              s += tmp[yy * width + x];
            }
            field[y * width + x] = s / (2 * kRadius + 1);
          }
        }
      }
      double mean = 0.0, sq = 0.0;
      for (double v : field) mean += v;
      mean /= static_cast<double>(plane);
      for (double v : field) sq += (v - mean) * (v - mean);
      const double sd = std::sqrt(sq / static_cast<double>(plane));
      for (std::size_t p = 0; p < plane; ++p) {
        data[p * channels + c] = static_cast<float>(sd > 0.0 ? (field[p] - mean) / sd : 0.0);
      }
    }
    ClassMap labels{1, height, width, std::vector<std::int32_t>(plane)};
    for (std::size_t p = 0; p < plane; ++p) {
      const double u = 0.5 * (std::tanh(static_cast<double>(data[p * channels])) + 1.0);
      labels.labels[p] = static_cast<std::int32_t>(std::min(class_count - 1, static_cast<std::size_t>(u * class_count)));
    }
    set.inputs.push_back(Tensor::from_f32({1, height, width, channels}, std::move(data)));
    set.labels.push_back(std::move(labels));
  }
  return set;
}

std::uint64_t fnv1a64(std::span<const std::byte> data, std::uint64_t state) {
  for (auto b : data) {
    state ^= static_cast<std::uint8_t>(b);
    state *= 0x100000001b3ull;
  }
  return state;
}

std::uint64_t model_hash(const ModelGraph& graph) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix_value = [&](std::uint64_t v) { h = fnv1a64(std::as_bytes(std::span(&v, 1)), h); };
  for (const auto& p : graph.params) {
    mix_value(static_cast<std::uint64_t>(p.index));
    mix_value(static_cast<std::uint64_t>(p.role));
    mix_value(static_cast<std::uint64_t>(p.tensor.encoding()));
    for (auto e : p.tensor.shape()) mix_value(e);
    h = fnv1a64(p.tensor.bytes(), h);
  }
  return h;
}

}  // namespace seuforge
