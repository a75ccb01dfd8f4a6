#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace seuforge {

/// Element encoding of a tensor. Fixed for the tensor's lifetime.
enum class Encoding : std::uint8_t { kF32, kI8, kI32 };

std::string_view to_string(Encoding encoding);
Encoding encoding_from_string(std::string_view name);

constexpr int bit_width(Encoding encoding) {
  return encoding == Encoding::kI8 ? 8 : 32;
}

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major tensor. Activations are NHWC, kernels are (Kh, Kw, Cin, Cout).
class Tensor {
 public:
  Tensor() = default;
  /// Zero-filled tensor.
  Tensor(Shape shape, Encoding encoding);

  static Tensor from_f32(Shape shape, std::vector<float> values);
  static Tensor from_i8(Shape shape, std::vector<std::int8_t> values);
  static Tensor from_i32(Shape shape, std::vector<std::int32_t> values);

  const Shape& shape() const noexcept { return shape_; }
  Encoding encoding() const noexcept { return encoding_; }
  std::size_t size() const noexcept;
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<float> f32();
  std::span<const float> f32() const;
  std::span<std::int8_t> i8();
  std::span<const std::int8_t> i8() const;
  std::span<std::int32_t> i32();
  std::span<const std::int32_t> i32() const;

  /// Raw stored bit pattern of element i, zero-extended to 32 bits.
  std::uint32_t bits(std::size_t i) const;
  /// Overwrites element i with the low bit_width() bits of pattern.
  void set_bits(std::size_t i, std::uint32_t pattern);
  /// Decoded numeric value of element i.
  double value(std::size_t i) const;

  std::span<const std::byte> bytes() const;
  std::span<std::byte> mutable_bytes();

  /// Reinterprets the extents; the element count must not change.
  void reshape(Shape shape);

  /// Bitwise equality (NaN payloads compare by pattern).
  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  Shape shape_;
  Encoding encoding_ = Encoding::kF32;
  std::variant<std::vector<float>, std::vector<std::int8_t>, std::vector<std::int32_t>> data_;
};

/// NHWC extents of a rank-4 activation tensor.
struct Nhwc {
  std::size_t n = 0, h = 0, w = 0, c = 0;
};
Nhwc nhwc_of(const Tensor& t);

std::uint32_t float_bits(float value);
float float_from_bits(std::uint32_t pattern);

}  // namespace seuforge
