#include "seuforge/quant.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "seuforge/error.hpp"

namespace seuforge {

double round_half_even(double x) {
  const double f = std::floor(x);
  const double diff = x - f;
  if (diff > 0.5) return f + 1.0;
  if (diff < 0.5) return f;
  return std::fmod(f, 2.0) == 0.0 ? f : f + 1.0;
}

std::int32_t saturate(double v, int bits) {
  const double hi = std::ldexp(1.0, bits - 1) - 1.0;
  const double lo = -std::ldexp(1.0, bits - 1);
  if (std::isnan(v)) return 0;
  return static_cast<std::int32_t>(std::clamp(v, lo, hi));
}

double dequantize(std::int64_t q, const QuantParams& params) {
  return params.scale * static_cast<double>(q - params.zero_point);
}

QuantParams symmetric_weight_params(double max_abs) {
  if (!(max_abs > 0.0) || !std::isfinite(max_abs)) return {1.0, 0, 8};
  return {max_abs / 127.0, 0, 8};
}

QuantParams activation_params(double lo, double hi) {
  lo = std::min(lo, 0.0);
  hi = std::max(hi, 0.0);
  if (!(hi > lo)) return {1.0, kQMin8, 8};
  const double scale = (hi - lo) / 255.0;
  const double z = round_half_even(static_cast<double>(kQMin8) - lo / scale);
  return {scale, std::clamp(static_cast<std::int32_t>(z), kQMin8, kQMax8), 8};
}

Tensor quantize_weights(const Tensor& weights, double max_abs) {
  const auto w = weights.f32();
  std::vector<std::int8_t> q(w.size());
  const bool degenerate = !(max_abs > 0.0) || !std::isfinite(max_abs);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double r = degenerate ? static_cast<double>(w[i]) : static_cast<double>(w[i]) * 127.0 / max_abs;
    q[i] = static_cast<std::int8_t>(std::clamp(saturate(round_half_even(r), 8), -127, 127));
  }
  return Tensor::from_i8(weights.shape(), std::move(q));
}

Tensor quantize_bias(std::span<const float> bias, double bias_scale) {
  std::vector<std::int32_t> q(bias.size());
  for (std::size_t i = 0; i < bias.size(); ++i) q[i] = saturate(round_half_even(bias[i] / bias_scale), 32);
  return Tensor::from_i32({bias.size()}, std::move(q));
}

Tensor quantize_activations(const Tensor& values, const QuantParams& params) {
  const auto x = values.f32();
  std::vector<std::int8_t> q(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double code = round_half_even(static_cast<double>(x[i]) / params.scale) + params.zero_point;
    q[i] = static_cast<std::int8_t>(saturate(code, 8));
  }
  return Tensor::from_i8(values.shape(), std::move(q));
}

Tensor dequantize_tensor(const Tensor& q, const QuantParams& params) {
  std::vector<float> out(q.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(dequantize(static_cast<std::int64_t>(q.value(i)), params));
  }
  return Tensor::from_f32(q.shape(), std::move(out));
}

Tensor requantize_tensor(const Tensor& q, const QuantParams& from, const QuantParams& to) {
  const auto x = q.i8();
  const double ratio = from.scale / to.scale;
  std::vector<std::int8_t> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double code = round_half_even(ratio * static_cast<double>(x[i] - from.zero_point)) + to.zero_point;
    out[i] = static_cast<std::int8_t>(saturate(code, 8));
  }
  return Tensor::from_i8(q.shape(), std::move(out));
}

std::int32_t requantize(std::int32_t acc, double multiplier, std::int32_t zero_point, std::int32_t clamp_lo) {
  const double code = round_half_even(multiplier * static_cast<double>(acc)) + zero_point;
  return std::clamp(saturate(code, 8), clamp_lo, kQMax8);
}

namespace {

inline std::int32_t wrap_add(std::int32_t a, std::int32_t b) {
  return static_cast<std::int32_t>(static_cast<std::uint32_t>(a) + static_cast<std::uint32_t>(b));
}

void check_quantized_operands(const Tensor& q_input, const Tensor& q_kernel, const Tensor& q_bias, const char* op) {
  if (q_input.encoding() != Encoding::kI8 || q_kernel.encoding() != Encoding::kI8 ||
      q_bias.encoding() != Encoding::kI32) {
    fail(ErrorCode::kInvalidArgument, std::string(op) + " expects i8 input/kernel and i32 bias");
  }
  if (q_kernel.rank() != 4 || q_kernel.dim(2) != nhwc_of(q_input).c || q_bias.size() != q_kernel.dim(3)) {
    fail(ErrorCode::kShapeMismatch, std::string(op) + " input " + shape_to_string(q_input.shape()) + " kernel " +
                                        shape_to_string(q_kernel.shape()) + " bias " +
                                        shape_to_string(q_bias.shape()));
  }
}

}  // namespace

Tensor quantized_conv2d(const Tensor& q_input, std::int32_t input_zero_point, const Tensor& q_kernel,
                        const Tensor& q_bias, double multiplier, std::int32_t output_zero_point, std::size_t stride,
                        Padding padding, std::int32_t clamp_lo) {
  check_quantized_operands(q_input, q_kernel, q_bias, "quantized_conv2d");
  const Nhwc in = nhwc_of(q_input);
  const std::size_t kh = q_kernel.dim(0), kw = q_kernel.dim(1), cin = in.c, cout = q_kernel.dim(3);
  const std::size_t oh = conv_output_extent(in.h, kh, stride, padding);
  const std::size_t ow = conv_output_extent(in.w, kw, stride, padding);
  std::size_t pad_top = 0, pad_left = 0;
  if (padding == Padding::kSame) {
    const std::size_t need_h = (oh - 1) * stride + kh, need_w = (ow - 1) * stride + kw;
    pad_top = need_h > in.h ? (need_h - in.h) / 2 : 0;
    pad_left = need_w > in.w ? (need_w - in.w) / 2 : 0;
  }
  const auto x = q_input.i8();
  const auto k = q_kernel.i8();
  const auto b = q_bias.i32();
  Tensor output({in.n, oh, ow, cout}, Encoding::kI8);
  auto y = output.i8();
  std::vector<std::int32_t> acc(cout);
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::fill(acc.begin(), acc.end(), 0);
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad_top);
          if (iy < 0 || iy >= static_cast<long>(in.h)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad_left);
            if (ix < 0 || ix >= static_cast<long>(in.w)) continue;
            const std::int8_t* px =
                &x[((n * in.h + static_cast<std::size_t>(iy)) * in.w + static_cast<std::size_t>(ix)) * cin];
            const std::size_t row0 = (ky * kw + kx) * cin;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const std::int32_t v = static_cast<std::int32_t>(px[ci]) - input_zero_point;
              if (v == 0) continue;
              const std::int8_t* kr = &k[(row0 + ci) * cout];
              for (std::size_t co = 0; co < cout; ++co) acc[co] = wrap_add(acc[co], v * kr[co]);
            }
          }
        }
        std::int8_t* py = &y[((n * oh + oy) * ow + ox) * cout];
        for (std::size_t co = 0; co < cout; ++co) {
          py[co] = static_cast<std::int8_t>(requantize(wrap_add(acc[co], b[co]), multiplier, output_zero_point, clamp_lo));
        }
      }
    }
  }
  return output;
}

Tensor quantized_conv2d_transpose(const Tensor& q_input, std::int32_t input_zero_point, const Tensor& q_kernel,
                                  const Tensor& q_bias, double multiplier, std::int32_t output_zero_point,
                                  std::size_t stride, std::int32_t clamp_lo) {
  check_quantized_operands(q_input, q_kernel, q_bias, "quantized_conv2d_transpose");
  const Nhwc in = nhwc_of(q_input);
  const std::size_t kh = q_kernel.dim(0), kw = q_kernel.dim(1), cin = in.c, cout = q_kernel.dim(3);
  if (kh != kw || stride != kh) {
    fail(ErrorCode::kUnsupported, "quantized_conv2d_transpose supports stride == kernel extent only");
  }
  const std::size_t oh = in.h * stride, ow = in.w * stride;
  const auto x = q_input.i8();
  const auto k = q_kernel.i8();
  const auto b = q_bias.i32();
  Tensor output({in.n, oh, ow, cout}, Encoding::kI8);
  auto y = output.i8();
  std::vector<std::int32_t> acc(cout);
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t iy = 0; iy < in.h; ++iy) {
      for (std::size_t ix = 0; ix < in.w; ++ix) {
        const std::int8_t* px = &x[((n * in.h + iy) * in.w + ix) * cin];
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            std::fill(acc.begin(), acc.end(), 0);
            const std::size_t row0 = (ky * kw + kx) * cin;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const std::int32_t v = static_cast<std::int32_t>(px[ci]) - input_zero_point;
              const std::int8_t* kr = &k[(row0 + ci) * cout];
              for (std::size_t co = 0; co < cout; ++co) acc[co] = wrap_add(acc[co], v * kr[co]);
            }
            std::int8_t* py = &y[((n * oh + iy * stride + ky) * ow + ix * stride + kx) * cout];
            for (std::size_t co = 0; co < cout; ++co) {
              py[co] = static_cast<std::int8_t>(
                  requantize(wrap_add(acc[co], b[co]), multiplier, output_zero_point, clamp_lo));
            }
          }
        }
      }
    }
  }
  return output;
}

Tensor quantized_maxpool2d(const Tensor& q_input) {
  const Nhwc in = nhwc_of(q_input);
  if (in.h % 2 != 0 || in.w % 2 != 0) {
    fail(ErrorCode::kShapeMismatch, "maxpool2d needs even spatial extents, got " + shape_to_string(q_input.shape()));
  }
  const auto x = q_input.i8();
  Tensor output({in.n, in.h / 2, in.w / 2, in.c}, Encoding::kI8);
  auto y = output.i8();
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t oy = 0; oy < in.h / 2; ++oy) {
      for (std::size_t ox = 0; ox < in.w / 2; ++ox) {
        for (std::size_t c = 0; c < in.c; ++c) {
          std::int8_t best = kQMin8;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              best = std::max(best, x[((n * in.h + 2 * oy + dy) * in.w + 2 * ox + dx) * in.c + c]);
            }
          }
          y[((n * (in.h / 2) + oy) * (in.w / 2) + ox) * in.c + c] = best;
        }
      }
    }
  }
  return output;
}

Tensor quantized_relu(const Tensor& q_input, std::int32_t zero_point) {
  const auto x = q_input.i8();
  std::vector<std::int8_t> out(x.size());
  const auto floor_code = static_cast<std::int8_t>(std::clamp(zero_point, kQMin8, kQMax8));
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::max(x[i], floor_code);
  return Tensor::from_i8(q_input.shape(), std::move(out));
}

}  // namespace seuforge
