#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "seuforge/tensor.hpp"

namespace seuforge {

enum class Padding : std::uint8_t { kSame, kValid };

/// Batch-normalization statistics for one layer. All vectors share the channel count.
struct BnParams {
  std::vector<float> gamma;
  std::vector<float> beta;
  std::vector<float> mean;
  std::vector<float> variance;
  float epsilon = 1e-3f;

  std::size_t channels() const { return gamma.size(); }
  void validate() const;
};

/// Predicted class per pixel. kInvalidClass marks a pixel whose logits held a NaN.
inline constexpr std::int32_t kInvalidClass = -1;

struct ClassMap {
  std::size_t n = 0, h = 0, w = 0;
  std::vector<std::int32_t> labels;

  std::size_t size() const { return labels.size(); }
  friend bool operator==(const ClassMap&, const ClassMap&) = default;
};

// Output spatial extent of a convolution along one axis.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding);

/// Cross-correlation plus bias. For every output element the products are
/// accumulated in (Kh, Kw, Cin) row-major order starting from +0, then the
/// bias is added. Zero padding takes part in the products, so a non-finite
/// weight facing the border still yields NaN, as a framework would.
Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, std::span<const float> bias,
                      std::size_t stride, Padding padding);

/// Transposed convolution for stride == kernel extent (non-overlapping taps).
Tensor conv2d_transpose_forward(const Tensor& input, const Tensor& kernel, std::span<const float> bias,
                                std::size_t stride);

/// y = gamma * (x - mean) / sqrt(variance + epsilon) + beta, per channel.
Tensor batchnorm_forward(const Tensor& input, const BnParams& params);

/// max(0, x); NaN stays NaN.
Tensor relu(const Tensor& input);

/// 2x2 window, stride 2. Any NaN in a window poisons the output.
Tensor maxpool2d(const Tensor& input);

Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Inverse of concat_channels: first `channels` channels and the remainder.
std::pair<Tensor, Tensor> split_channels(const Tensor& input, std::size_t channels);

/// Lowest index attaining the maximum; kInvalidClass if any channel is NaN.
ClassMap argmax_channels(const Tensor& logits);

}  // namespace seuforge
