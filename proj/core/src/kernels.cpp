#include "seuforge/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "seuforge/error.hpp"

namespace seuforge {

void BnParams::validate() const {
  const auto c = gamma.size();
  if (beta.size() != c || mean.size() != c || variance.size() != c) {
    fail(ErrorCode::kShapeMismatch, "batch-norm vectors differ in length: gamma " + std::to_string(c) + ", beta " +
                                        std::to_string(beta.size()) + ", mean " + std::to_string(mean.size()) +
                                        ", variance " + std::to_string(variance.size()));
  }
  if (!(epsilon > 0.0f)) fail(ErrorCode::kInvalidArgument, "batch-norm epsilon must be positive");
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding) {
  if (stride == 0) fail(ErrorCode::kInvalidArgument, "stride must be positive");
  if (padding == Padding::kSame) return (in + stride - 1) / stride;
  if (in < kernel) {
    fail(ErrorCode::kShapeMismatch,
         "valid convolution needs input extent >= kernel, got " + std::to_string(in) + " < " + std::to_string(kernel));
  }
  return (in - kernel) / stride + 1;
}

namespace {

std::size_t same_pad_before(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride) {
  const std::size_t needed = (out - 1) * stride + kernel;
  return needed > in ? (needed - in) / 2 : 0;
}

void require_f32(const Tensor& t, const char* what) {
  if (t.encoding() != Encoding::kF32) {
    fail(ErrorCode::kInvalidArgument, std::string(what) + " must be f32, got " + std::string(to_string(t.encoding())));
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, std::span<const float> bias, std::size_t stride,
                      Padding padding) {
  require_f32(input, "conv2d input");
  require_f32(kernel, "conv2d kernel");
  const Nhwc in = nhwc_of(input);
  if (kernel.rank() != 4) fail(ErrorCode::kShapeMismatch, "conv2d kernel must be rank 4, got " + shape_to_string(kernel.shape()));
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1), cin = kernel.dim(2), cout = kernel.dim(3);
  if (cin != in.c) {
    fail(ErrorCode::kShapeMismatch, "conv2d input " + shape_to_string(input.shape()) + " does not match kernel " +
                                        shape_to_string(kernel.shape()) + " (Cin)");
  }
  if (bias.size() != cout) {
    fail(ErrorCode::kShapeMismatch, "conv2d bias has " + std::to_string(bias.size()) + " elements, kernel " +
                                        shape_to_string(kernel.shape()) + " has Cout " + std::to_string(cout));
  }
  const std::size_t oh = conv_output_extent(in.h, kh, stride, padding);
  const std::size_t ow = conv_output_extent(in.w, kw, stride, padding);
  const std::size_t pad_top = padding == Padding::kSame ? same_pad_before(in.h, oh, kh, stride) : 0;
  const std::size_t pad_left = padding == Padding::kSame ? same_pad_before(in.w, ow, kw, stride) : 0;

  const auto x = input.f32();
  const auto k = kernel.f32();
  Tensor output({in.n, oh, ow, cout}, Encoding::kF32);
  auto y = output.f32();

  // A zero input contributes +-0 to the accumulator, which never changes it
  // (the accumulator starts at +0 and round-to-nearest never yields -0 from
  // a sum), unless the kernel row holds Inf/NaN. Skipping is then exact.
  std::vector<std::uint8_t> row_finite(kh * kw * cin, 1);
  for (std::size_t r = 0; r < row_finite.size(); ++r) {
    for (std::size_t co = 0; co < cout; ++co) {
      if (!std::isfinite(k[r * cout + co])) {
        row_finite[r] = 0;
        break;
      }
    }
  }

  std::vector<float> acc(cout);
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::fill(acc.begin(), acc.end(), 0.0f);
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad_top);
          const bool row_inside = iy >= 0 && iy < static_cast<long>(in.h);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad_left);
            const bool inside = row_inside && ix >= 0 && ix < static_cast<long>(in.w);
            const float* px = inside ? &x[((n * in.h + static_cast<std::size_t>(iy)) * in.w + static_cast<std::size_t>(ix)) * in.c]
                                     : nullptr;
            const std::size_t row0 = (ky * kw + kx) * cin;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const float v = inside ? px[ci] : 0.0f;
              if (v == 0.0f && row_finite[row0 + ci]) continue;
              const float* kr = &k[(row0 + ci) * cout];
              for (std::size_t co = 0; co < cout; ++co) acc[co] += v * kr[co];
            }
          }
        }
        float* py = &y[((n * oh + oy) * ow + ox) * cout];
        for (std::size_t co = 0; co < cout; ++co) py[co] = acc[co] + bias[co];
      }
    }
  }
  return output;
}

Tensor conv2d_transpose_forward(const Tensor& input, const Tensor& kernel, std::span<const float> bias,
                                std::size_t stride) {
  require_f32(input, "conv2d_transpose input");
  require_f32(kernel, "conv2d_transpose kernel");
  const Nhwc in = nhwc_of(input);
  if (kernel.rank() != 4) {
    fail(ErrorCode::kShapeMismatch, "conv2d_transpose kernel must be rank 4, got " + shape_to_string(kernel.shape()));
  }
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1), cin = kernel.dim(2), cout = kernel.dim(3);
  if (kh != kw || stride != kh) {
    fail(ErrorCode::kUnsupported, "conv2d_transpose supports stride == kernel extent only, got kernel " +
                                      shape_to_string(kernel.shape()) + " stride " + std::to_string(stride));
  }
  if (cin != in.c) {
    fail(ErrorCode::kShapeMismatch, "conv2d_transpose input " + shape_to_string(input.shape()) +
                                        " does not match kernel " + shape_to_string(kernel.shape()) + " (Cin)");
  }
  if (bias.size() != cout) {
    fail(ErrorCode::kShapeMismatch, "conv2d_transpose bias has " + std::to_string(bias.size()) +
                                        " elements, expected " + std::to_string(cout));
  }
  const std::size_t oh = in.h * stride, ow = in.w * stride;
  const auto x = input.f32();
  const auto k = kernel.f32();
  Tensor output({in.n, oh, ow, cout}, Encoding::kF32);
  auto y = output.f32();
  std::vector<float> acc(cout);
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t iy = 0; iy < in.h; ++iy) {
      for (std::size_t ix = 0; ix < in.w; ++ix) {
        const float* px = &x[((n * in.h + iy) * in.w + ix) * in.c];
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            std::fill(acc.begin(), acc.end(), 0.0f);
            const std::size_t row0 = (ky * kw + kx) * cin;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const float v = px[ci];
              const float* kr = &k[(row0 + ci) * cout];
              for (std::size_t co = 0; co < cout; ++co) acc[co] += v * kr[co];
            }
            float* py = &y[((n * oh + iy * stride + ky) * ow + ix * stride + kx) * cout];
            for (std::size_t co = 0; co < cout; ++co) py[co] = acc[co] + bias[co];
          }
        }
      }
    }
  }
  return output;
}

Tensor batchnorm_forward(const Tensor& input, const BnParams& params) {
  require_f32(input, "batchnorm input");
  params.validate();
  const Nhwc in = nhwc_of(input);
  if (params.channels() != in.c) {
    fail(ErrorCode::kShapeMismatch, "batchnorm input " + shape_to_string(input.shape()) + " has " +
                                        std::to_string(in.c) + " channels, parameters have " +
                                        std::to_string(params.channels()));
  }
  std::vector<float> denom(in.c);
  for (std::size_t c = 0; c < in.c; ++c) denom[c] = std::sqrt(params.variance[c] + params.epsilon);
  Tensor output(input.shape(), Encoding::kF32);
  const auto x = input.f32();
  auto y = output.f32();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t c = i % in.c;
    y[i] = params.gamma[c] * ((x[i] - params.mean[c]) / denom[c]) + params.beta[c];
  }
  return output;
}

Tensor relu(const Tensor& input) {
  require_f32(input, "relu input");
  Tensor output(input.shape(), Encoding::kF32);
  const auto x = input.f32();
  auto y = output.f32();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float v = x[i];
    y[i] = std::isnan(v) ? v : (v > 0.0f ? v : 0.0f);
  }
  return output;
}

Tensor maxpool2d(const Tensor& input) {
  require_f32(input, "maxpool input");
  const Nhwc in = nhwc_of(input);
  if (in.h % 2 != 0 || in.w % 2 != 0) {
    fail(ErrorCode::kShapeMismatch, "maxpool2d needs even spatial extents, got " + shape_to_string(input.shape()));
  }
  const std::size_t oh = in.h / 2, ow = in.w / 2;
  Tensor output({in.n, oh, ow, in.c}, Encoding::kF32);
  const auto x = input.f32();
  auto y = output.f32();
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        for (std::size_t c = 0; c < in.c; ++c) {
          float best = 0.0f;
          bool first = true;
          bool poisoned = false;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const float v = x[((n * in.h + 2 * oy + dy) * in.w + 2 * ox + dx) * in.c + c];
              if (std::isnan(v)) poisoned = true;
              if (first || v > best) best = v;
              first = false;
            }
          }
          y[((n * oh + oy) * ow + ox) * in.c + c] = poisoned ? std::nanf("") : best;
        }
      }
    }
  }
  return output;
}

namespace {

template <typename T>
void interleave(std::span<const T> a, std::size_t ca, std::span<const T> b, std::size_t cb, std::span<T> out) {
  const std::size_t pixels = a.size() / ca;
  for (std::size_t p = 0; p < pixels; ++p) {
    std::copy_n(&a[p * ca], ca, &out[p * (ca + cb)]);
    std::copy_n(&b[p * cb], cb, &out[p * (ca + cb) + ca]);
  }
}

}  // namespace

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Nhwc sa = nhwc_of(a);
  const Nhwc sb = nhwc_of(b);
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w || a.encoding() != b.encoding()) {
    fail(ErrorCode::kShapeMismatch, "concat_channels operands differ: " + shape_to_string(a.shape()) + " " +
                                        std::string(to_string(a.encoding())) + " vs " + shape_to_string(b.shape()) +
                                        " " + std::string(to_string(b.encoding())));
  }
  Tensor out({sa.n, sa.h, sa.w, sa.c + sb.c}, a.encoding());
  switch (a.encoding()) {
    case Encoding::kF32: interleave<float>(a.f32(), sa.c, b.f32(), sb.c, out.f32()); break;
    case Encoding::kI8: interleave<std::int8_t>(a.i8(), sa.c, b.i8(), sb.c, out.i8()); break;
    case Encoding::kI32: interleave<std::int32_t>(a.i32(), sa.c, b.i32(), sb.c, out.i32()); break;
  }
  return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& input, std::size_t channels) {
  const Nhwc s = nhwc_of(input);
  if (channels == 0 || channels >= s.c) {
    fail(ErrorCode::kInvalidArgument, "split point " + std::to_string(channels) + " must lie inside (0, " +
                                          std::to_string(s.c) + ")");
  }
  Tensor first({s.n, s.h, s.w, channels}, input.encoding());
  Tensor second({s.n, s.h, s.w, s.c - channels}, input.encoding());
  const auto src = input.bytes();
  auto d1 = first.mutable_bytes();
  auto d2 = second.mutable_bytes();
  const std::size_t esz = src.size() / input.size();
  const std::size_t pixels = s.n * s.h * s.w;
  for (std::size_t p = 0; p < pixels; ++p) {
    std::copy_n(&src[p * s.c * esz], channels * esz, &d1[p * channels * esz]);
    std::copy_n(&src[(p * s.c + channels) * esz], (s.c - channels) * esz, &d2[p * (s.c - channels) * esz]);
  }
  return {std::move(first), std::move(second)};
}

ClassMap argmax_channels(const Tensor& logits) {
  require_f32(logits, "argmax input");
  const Nhwc s = nhwc_of(logits);
  if (s.c == 0) fail(ErrorCode::kShapeMismatch, "argmax needs at least one channel");
  ClassMap map{s.n, s.h, s.w, std::vector<std::int32_t>(s.n * s.h * s.w)};
  const auto x = logits.f32();
  for (std::size_t p = 0; p < map.labels.size(); ++p) {
    const float* row = &x[p * s.c];
    std::int32_t best = 0;
    bool invalid = std::isnan(row[0]);
    for (std::size_t c = 1; c < s.c && !invalid; ++c) {
      if (std::isnan(row[c])) invalid = true;
      else if (row[c] > row[best]) best = static_cast<std::int32_t>(c);
    }
    map.labels[p] = invalid ? kInvalidClass : best;
  }
  return map;
}

}  // namespace seuforge
