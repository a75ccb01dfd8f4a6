#pragma once

#include <cstdint>

#include "seuforge/kernels.hpp"
#include "seuforge/tensor.hpp"

namespace seuforge {

/// Affine integer mapping r = scale * (q - zero_point).
struct QuantParams {
  double scale = 1.0;
  std::int32_t zero_point = 0;
  int bits = 8;

  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

inline constexpr std::int32_t kQMin8 = -128;
inline constexpr std::int32_t kQMax8 = 127;

/// Round half to even, independent of the current FP rounding mode.
double round_half_even(double x);
std::int32_t saturate(double v, int bits);

double dequantize(std::int64_t q, const QuantParams& params);

/// Symmetric weight table: scale = max|w| / 127, zero point 0. A tensor of
/// zeros gets scale 1 by convention.
QuantParams symmetric_weight_params(double max_abs);
/// Asymmetric 8-bit activation table over [min(lo,0), max(hi,0)].
QuantParams activation_params(double lo, double hi);

/// q = clamp(round_half_even(r * (127 / max_abs))) for weights; computed this
/// way so that exact ratios like 0.5 -> 63.5 are rounded exactly.
Tensor quantize_weights(const Tensor& weights, double max_abs);
Tensor quantize_bias(std::span<const float> bias, double bias_scale);
Tensor quantize_activations(const Tensor& values, const QuantParams& params);
Tensor dequantize_tensor(const Tensor& q, const QuantParams& params);
/// Maps codes between two activation tables (used at concat joints).
Tensor requantize_tensor(const Tensor& q, const QuantParams& from, const QuantParams& to);

/// Output code for one accumulator:
///   clamp(Z_y + round_half_even(multiplier * acc), clamp_lo, 127),
/// where acc = sum q_w * (q_x - Z_x) + q_b and multiplier = S_w*S_x/S_y.
std::int32_t requantize(std::int32_t acc, double multiplier, std::int32_t zero_point,
                        std::int32_t clamp_lo = kQMin8);

/// Integer convolution with 32-bit wrapping accumulators. Padding takes the
/// input zero point so padded taps contribute nothing.
Tensor quantized_conv2d(const Tensor& q_input, std::int32_t input_zero_point, const Tensor& q_kernel,
                        const Tensor& q_bias, double multiplier, std::int32_t output_zero_point,
                        std::size_t stride, Padding padding, std::int32_t clamp_lo = kQMin8);

Tensor quantized_conv2d_transpose(const Tensor& q_input, std::int32_t input_zero_point, const Tensor& q_kernel,
                                  const Tensor& q_bias, double multiplier, std::int32_t output_zero_point,
                                  std::size_t stride, std::int32_t clamp_lo = kQMin8);

Tensor quantized_maxpool2d(const Tensor& q_input);
/// max(q, zero_point), i.e. ReLU in the code domain.
Tensor quantized_relu(const Tensor& q_input, std::int32_t zero_point);

}  // namespace seuforge
