#pragma once

// Straightforward reference implementations the library is checked against.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "seuforge/kernels.hpp"
#include "seuforge/tensor.hpp"

namespace oracle {

/// Direct NHWC convolution, accumulated in double.
inline std::vector<double> conv2d(const seuforge::Tensor& x, const seuforge::Tensor& k, const std::vector<double>& bias,
                                  std::size_t stride, bool same) {
  const auto in = seuforge::nhwc_of(x);
  const std::size_t kh = k.dim(0), kw = k.dim(1), co = k.dim(3);
  const std::size_t oh = same ? (in.h + stride - 1) / stride : (in.h - kh) / stride + 1;
  const std::size_t ow = same ? (in.w + stride - 1) / stride : (in.w - kw) / stride + 1;
  // TensorFlow "same": total padding split with the extra row/column at the end.
  auto before = [&](std::size_t n, std::size_t o, std::size_t kk) -> std::size_t {
    const long total = static_cast<long>((o - 1) * stride + kk) - static_cast<long>(n);
    return same && total > 0 ? static_cast<std::size_t>(total / 2) : 0;
  };
  const std::size_t ph = before(in.h, oh, kh), pw = before(in.w, ow, kw);
  std::vector<double> out(in.n * oh * ow * co);
  const auto xv = x.f32();
  const auto kv = k.f32();
  for (std::size_t n = 0; n < in.n; ++n)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t o = 0; o < co; ++o) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t b = 0; b < kw; ++b) {
              const long r = static_cast<long>(i * stride + a) - static_cast<long>(ph);
              const long c = static_cast<long>(j * stride + b) - static_cast<long>(pw);
              if (r < 0 || c < 0 || r >= static_cast<long>(in.h) || c >= static_cast<long>(in.w)) continue;
              for (std::size_t ci = 0; ci < in.c; ++ci) {
                acc += static_cast<double>(xv[((n * in.h + r) * in.w + c) * in.c + ci]) *
                       kv[((a * kw + b) * in.c + ci) * co + o];
              }
            }
          out[((n * oh + i) * ow + j) * co + o] = acc;
        }
  return out;
}

/// Scatter-add transposed convolution.
inline std::vector<double> conv2d_transpose(const seuforge::Tensor& x, const seuforge::Tensor& k,
                                            const std::vector<double>& bias, std::size_t stride) {
  const auto in = seuforge::nhwc_of(x);
  const std::size_t kh = k.dim(0), kw = k.dim(1), ci_n = k.dim(2), co = k.dim(3);
  const std::size_t oh = (in.h - 1) * stride + kh, ow = (in.w - 1) * stride + kw;
  std::vector<double> out(in.n * oh * ow * co, 0.0);
  const auto xv = x.f32();
  const auto kv = k.f32();
  for (std::size_t n = 0; n < in.n; ++n)
    for (std::size_t i = 0; i < in.h; ++i)
      for (std::size_t j = 0; j < in.w; ++j)
        for (std::size_t ci = 0; ci < ci_n; ++ci) {
          const double v = xv[((n * in.h + i) * in.w + j) * in.c + ci];
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t b = 0; b < kw; ++b)
              for (std::size_t o = 0; o < co; ++o) {
                out[((n * oh + i * stride + a) * ow + j * stride + b) * co + o] += v * kv[((a * kw + b) * ci_n + ci) * co + o];
              }
        }
  for (std::size_t p = 0; p < out.size(); ++p) out[p] += bias.empty() ? 0.0 : bias[p % co];
  return out;
}

inline double max_abs_diff(std::span<const float> a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
