#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seuforge/kernels.hpp"
#include "seuforge/quant.hpp"
#include "seuforge/tensor.hpp"

namespace seuforge {

enum class LayerKind : std::uint8_t {
  kConv2d,
  kConv2dTranspose,
  kBatchNorm,
  kRelu,
  kMaxPool,
  kConcat,
  kOutputConv,
};

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

enum class ParamRole : std::uint8_t {
  kConvKernel,
  kConvBias,
  kConvTrKernel,
  kConvTrBias,
  kBnGamma,
  kBnBeta,
  kBnMean,
  kBnVariance,
};

std::string_view to_string(ParamRole role);
ParamRole param_role_from_string(std::string_view name);
bool is_bias_role(ParamRole role);
bool is_kernel_role(ParamRole role);

/// Roles a layer of this kind owns, in p-index order (kernels before biases,
/// batch-norm as gamma, beta, mean, variance).
std::vector<ParamRole> roles_for(LayerKind kind);

/// Name of the implicit graph input that layers reference.
inline constexpr std::string_view kGraphInput = "input";

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::string name;
  std::vector<std::string> inputs;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  Padding padding = Padding::kSame;
  std::size_t filters = 0;
  float epsilon = 1e-3f;

  bool has_params() const { return !roles_for(kind).empty(); }
};

/// One role-homogeneous tensor of a layer, addressed by its 1-based p-index.
struct ParamSet {
  int index = 0;
  std::string layer;
  ParamRole role = ParamRole::kConvKernel;
  Tensor tensor;
  std::optional<QuantParams> quant;
};

struct TransformRecord {
  std::string name;
  std::string params_json;

  friend bool operator==(const TransformRecord&, const TransformRecord&) = default;
};

struct ModelMetadata {
  std::string provenance;
  std::uint64_t seed = 0;
  std::string prng = "mt19937_64";
  bool pruned = false;
  bool folded = false;
  bool quantized = false;
  std::vector<TransformRecord> transforms;
  /// Activation tables keyed by producing layer name (and kGraphInput).
  std::map<std::string, QuantParams, std::less<>> activation_quant;
  std::map<std::string, std::string, std::less<>> notes;
};

/// Ordered layer DAG plus its p-indexed parameter sets. Layers are stored in
/// topological order; the last layer is the single output.
class ModelGraph {
 public:
  std::vector<LayerSpec> layers;
  std::vector<ParamSet> params;
  std::size_t input_channels = 0;
  std::size_t class_count = 0;
  ModelMetadata metadata;

  std::optional<std::size_t> find_layer(std::string_view name) const;
  const LayerSpec& layer(std::string_view name) const;
  std::size_t layer_index(std::string_view name) const;

  ParamSet* find_param(std::string_view layer_name, ParamRole role);
  const ParamSet* find_param(std::string_view layer_name, ParamRole role) const;
  ParamSet& param(std::string_view layer_name, ParamRole role);
  const ParamSet& param(std::string_view layer_name, ParamRole role) const;

  /// 1-based p-index lookup.
  ParamSet& pset(int index);
  const ParamSet& pset(int index) const;
  int pset_count() const { return static_cast<int>(params.size()); }
  /// Index into `layers` of the layer owning p-index `index`.
  std::size_t layer_of_pset(int index) const;

  std::size_t parameter_count() const;
  /// Indices of layers that read `name`.
  std::vector<std::size_t> consumers(std::string_view name) const;
  const LayerSpec& output_layer() const { return layers.back(); }
};

/// Rebuilds p-indices 1..N in layer order, roles in roles_for() order.
void reindex_params(ModelGraph& graph);

/// Structural check: unique names, topological references, arity, full
/// parameter complement with consistent shapes, single output.
void validate(const ModelGraph& graph);

/// Output channel count per layer.
std::vector<std::size_t> infer_channels(const ModelGraph& graph);
/// Output NHWC shape per layer for a given input shape.
std::vector<Shape> infer_shapes(const ModelGraph& graph, const Shape& input_shape);

struct UnetConfig {
  std::size_t levels = 3;
  std::size_t base_filters = 8;
  std::size_t class_count = 4;
  std::size_t input_channels = 4;
  float epsilon = 1e-3f;
};

/// Encoder-decoder with `levels` pooling stages, a bottleneck, and a mirrored
/// decoder: two (3x3 conv, BN, ReLU) blocks per level, 2x2 max-pool per
/// encoder level, 2x2 stride-2 transposed conv plus skip concat per decoder
/// level, and a final 1x1 output convolution. Parameters start as the
/// identity BN and zero convolutions.
ModelGraph build_unet(const UnetConfig& config);

enum class WeightDistribution : std::uint8_t { kUniform, kMixedSignBiases };

struct ToyWeightConfig {
  WeightDistribution distribution = WeightDistribution::kMixedSignBiases;
  /// Kernel bound as a multiple of sqrt(3 / fan_in).
  double kernel_gain = 1.0;
  /// mixed-sign-biases: |b| ~ U(bias_min, bias_max), sign ~ Bernoulli(fraction).
  double bias_min = 0.01;
  double bias_max = 0.5;
  double positive_bias_fraction = 0.5;
  /// Per-layer override of positive_bias_fraction (conv layer name -> fraction).
  std::map<std::string, double, std::less<>> layer_positive_fraction;
  double gamma_min = 0.1;
  double gamma_max = 2.0;
  double beta_max = 0.5;
  double sigma_min = 0.01;
  double sigma_max = 1.0;
  /// Running mean offset, in units of the channel's std.
  double mean_offset = 0.5;
  /// Output biases are drawn with magnitude in [bias_min, output_bias_max).
  double output_bias_max = 0.9;
  double logit_scale = 1.5;
  /// Rescale filters on a probe image so pre-BN channels have the drawn variance.
  bool normalize = true;
};

/// Deterministic substitute for trained weights.
ModelGraph generate_toy_weights(const ModelGraph& graph, std::uint64_t seed, const ToyWeightConfig& config = {});

struct CalibrationSet {
  std::vector<Tensor> inputs;
  std::vector<ClassMap> labels;
};

inline constexpr std::size_t kDefaultCalibrationCount = 10;

/// Band-limited random fields (box-blurred white noise, standardized per
/// channel) with labels from a fixed rule on channel 0.
CalibrationSet generate_calibration_set(std::size_t height, std::size_t width, std::size_t channels,
                                        std::size_t count, std::uint64_t seed, std::size_t class_count);

/// FNV-1a over every parameter's role, shape, encoding and raw bytes.
std::uint64_t model_hash(const ModelGraph& graph);
std::uint64_t fnv1a64(std::span<const std::byte> data, std::uint64_t state = 0xcbf29ce484222325ull);

}  // namespace seuforge
