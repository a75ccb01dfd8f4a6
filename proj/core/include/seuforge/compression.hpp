#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "seuforge/model.hpp"

namespace seuforge {

/// Folds every batch-norm into the convolution that feeds it:
///   w' = w * gamma / sqrt(sigma + eps),  b' = gamma * (b - mu) / sqrt(sigma + eps) + beta.
/// The per-channel factor is evaluated in double and rounded once.
ModelGraph fold_bn(const ModelGraph& graph);

/// Post-training quantization: symmetric per-tensor int8 weights, int32
/// biases at S_w * S_x, asymmetric int8 activations from min/max over the
/// calibration inputs. Unfolded graphs are folded first. A convolution whose
/// only consumer is a ReLU is given the ReLU's activation table.
ModelGraph quantize_ptq(const ModelGraph& graph, std::span<const Tensor> calibration);

struct PruneOptions {
  /// Fraction of filters kept per layer, in (0, 1].
  std::optional<double> keep_fraction;
  /// Alternatively drop filters whose kernel L1 norm is below this.
  std::optional<double> l1_threshold;
  std::size_t min_filters = 2;
};

/// Single-pass structured pruning by kernel L1 norm. Every hidden conv and
/// transposed conv keeps max(min_filters, round(keep * F)) filters (the
/// output convolution keeps all); channels are removed consistently from
/// batch-norms, downstream kernels and concat joints.
ModelGraph prune_structured(const ModelGraph& graph, const PruneOptions& options);

using ParamPredicate = std::function<bool(const ParamSet& set, std::size_t element, float value)>;

struct SparseZeroResult {
  ModelGraph graph;
  std::size_t zeroed = 0;
};

/// Sets every matching f32 element to +0.0.
SparseZeroResult sparse_zero(const ModelGraph& graph, const ParamPredicate& predicate);

/// Matches values with lo <= |v| < hi.
ParamPredicate magnitude_in(double lo, double hi, std::vector<ParamRole> roles = {});

/// Kernel elements whose input channel is exactly zero everywhere on the
/// witness inputs (for example behind a ReLU that never fires). Zeroing
/// them leaves those inputs' outputs unchanged.
ParamPredicate irrelevant_weights(const ModelGraph& graph, std::span<const Tensor> witnesses);

}  // namespace seuforge
