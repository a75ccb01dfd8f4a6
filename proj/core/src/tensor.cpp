#include "seuforge/tensor.hpp"

#include <bit>
#include <cstring>
#include <numeric>

#include "seuforge/error.hpp"

namespace seuforge {

std::string_view to_string(Encoding encoding) {
  switch (encoding) {
    case Encoding::kF32: return "f32";
    case Encoding::kI8: return "i8";
    case Encoding::kI32: return "i32";
  }
  return "?";
}

Encoding encoding_from_string(std::string_view name) {
  if (name == "f32") return Encoding::kF32;
  if (name == "i8") return Encoding::kI8;
  if (name == "i32") return Encoding::kI32;
  fail(ErrorCode::kInvalidArgument, "unknown encoding '" + std::string(name) + "'");
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {

void check_shape(const Shape& shape, std::size_t length) {
  for (auto extent : shape) {
    if (extent == 0) fail(ErrorCode::kInvalidArgument, "tensor extents must be positive, got " + shape_to_string(shape));
  }
  if (element_count(shape) != length) {
    fail(ErrorCode::kShapeMismatch, "shape " + shape_to_string(shape) + " holds " +
                                        std::to_string(element_count(shape)) + " elements, buffer has " +
                                        std::to_string(length));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, Encoding encoding) : shape_(std::move(shape)), encoding_(encoding) {
  const std::size_t n = element_count(shape_);
  check_shape(shape_, n);
  switch (encoding) {
    case Encoding::kF32: data_ = std::vector<float>(n, 0.0f); break;
    case Encoding::kI8: data_ = std::vector<std::int8_t>(n, 0); break;
    case Encoding::kI32: data_ = std::vector<std::int32_t>(n, 0); break;
  }
}

Tensor Tensor::from_f32(Shape shape, std::vector<float> values) {
  check_shape(shape, values.size());
  Tensor t;
  t.shape_ = std::move(shape);
  t.encoding_ = Encoding::kF32;
  t.data_ = std::move(values);
  return t;
}

Tensor Tensor::from_i8(Shape shape, std::vector<std::int8_t> values) {
  check_shape(shape, values.size());
  Tensor t;
  t.shape_ = std::move(shape);
  t.encoding_ = Encoding::kI8;
  t.data_ = std::move(values);
  return t;
}

Tensor Tensor::from_i32(Shape shape, std::vector<std::int32_t> values) {
  check_shape(shape, values.size());
  Tensor t;
  t.shape_ = std::move(shape);
  t.encoding_ = Encoding::kI32;
  t.data_ = std::move(values);
  return t;
}

std::size_t Tensor::size() const noexcept {
  return std::visit([](const auto& v) { return v.size(); }, data_);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) fail(ErrorCode::kOutOfRange, "axis out of range for " + shape_to_string(shape_));
  return shape_[axis];
}

namespace {
template <typename T, typename V>
auto& expect(V& data, Encoding have, Encoding want) {
  if (have != want) {
    fail(ErrorCode::kInvalidArgument,
         "tensor encoding is " + std::string(to_string(have)) + ", requested " + std::string(to_string(want)));
  }
  return std::get<std::vector<T>>(data);
}
}  // namespace

std::span<float> Tensor::f32() { return expect<float>(data_, encoding_, Encoding::kF32); }
std::span<const float> Tensor::f32() const { return expect<float>(data_, encoding_, Encoding::kF32); }
std::span<std::int8_t> Tensor::i8() { return expect<std::int8_t>(data_, encoding_, Encoding::kI8); }
std::span<const std::int8_t> Tensor::i8() const { return expect<std::int8_t>(data_, encoding_, Encoding::kI8); }
std::span<std::int32_t> Tensor::i32() { return expect<std::int32_t>(data_, encoding_, Encoding::kI32); }
std::span<const std::int32_t> Tensor::i32() const { return expect<std::int32_t>(data_, encoding_, Encoding::kI32); }

std::uint32_t Tensor::bits(std::size_t i) const {
  if (i >= size()) fail(ErrorCode::kOutOfRange, "element " + std::to_string(i) + " out of range " + std::to_string(size()));
  switch (encoding_) {
    case Encoding::kF32: return std::bit_cast<std::uint32_t>(std::get<0>(data_)[i]);
    case Encoding::kI8: return static_cast<std::uint8_t>(std::get<1>(data_)[i]);
    case Encoding::kI32: return std::bit_cast<std::uint32_t>(std::get<2>(data_)[i]);
  }
  return 0;
}

void Tensor::set_bits(std::size_t i, std::uint32_t pattern) {
  if (i >= size()) fail(ErrorCode::kOutOfRange, "element " + std::to_string(i) + " out of range " + std::to_string(size()));
  switch (encoding_) {
    case Encoding::kF32: std::get<0>(data_)[i] = std::bit_cast<float>(pattern); break;
    case Encoding::kI8: std::get<1>(data_)[i] = std::bit_cast<std::int8_t>(static_cast<std::uint8_t>(pattern & 0xFFu)); break;
    case Encoding::kI32: std::get<2>(data_)[i] = std::bit_cast<std::int32_t>(pattern); break;
  }
}

double Tensor::value(std::size_t i) const {
  if (i >= size()) fail(ErrorCode::kOutOfRange, "element " + std::to_string(i) + " out of range " + std::to_string(size()));
  switch (encoding_) {
    case Encoding::kF32: return std::get<0>(data_)[i];
    case Encoding::kI8: return std::get<1>(data_)[i];
    case Encoding::kI32: return std::get<2>(data_)[i];
  }
  return 0.0;
}

std::span<const std::byte> Tensor::bytes() const {
  return std::visit([](const auto& v) { return std::as_bytes(std::span(v)); }, data_);
}

std::span<std::byte> Tensor::mutable_bytes() {
  return std::visit([](auto& v) { return std::as_writable_bytes(std::span(v)); }, data_);
}

void Tensor::reshape(Shape shape) {
  check_shape(shape, size());
  shape_ = std::move(shape);
}

bool operator==(const Tensor& a, const Tensor& b) {
  if (a.encoding_ != b.encoding_ || a.shape_ != b.shape_) return false;
  auto x = a.bytes();
  auto y = b.bytes();
  return x.size() == y.size() && std::memcmp(x.data(), y.data(), x.size()) == 0;
}

Nhwc nhwc_of(const Tensor& t) {
  if (t.rank() != 4) fail(ErrorCode::kShapeMismatch, "expected NHWC rank-4 tensor, got " + shape_to_string(t.shape()));
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

std::uint32_t float_bits(float value) { return std::bit_cast<std::uint32_t>(value); }
float float_from_bits(std::uint32_t pattern) { return std::bit_cast<float>(pattern); }

}  // namespace seuforge
