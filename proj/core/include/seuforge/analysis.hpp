#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seuforge/inference.hpp"
#include "seuforge/model.hpp"

namespace seuforge {

struct PositiveRatioRow {
  int pset = 0;
  std::string layer;
  ParamRole role = ParamRole::kConvBias;
  std::uint64_t positive = 0;
  std::uint64_t total = 0;
  double percent = 0.0;
};

/// Sign census of the selected roles (zeros are not positive). Works on
/// float values and integer codes alike.
std::vector<PositiveRatioRow> positive_ratio_table(
    const ModelGraph& graph,
    std::vector<ParamRole> roles = {ParamRole::kConvBias, ParamRole::kBnBeta, ParamRole::kConvTrBias});
/// Columns: Name,Pos.,Total,%
std::string positive_ratio_csv(std::span<const PositiveRatioRow> rows);
std::string positive_ratio_json(std::span<const PositiveRatioRow> rows);

/// Exponent-field states of an f32 with respect to single bit-flips.
enum class ExponentRisk : std::uint8_t {
  kNone,
  /// 01111111: seven ones with MSB 0; one flip away from all ones.
  kFullMinusOne,
  /// MSB 0 and six ones among the low seven bits.
  kPartialMinusOne,
  /// 10000000, reported apart from the risky counts.
  kExponent128,
};

std::string_view to_string(ExponentRisk risk);
std::uint32_t exponent_field(std::uint32_t pattern);
ExponentRisk classify_exponent(std::uint32_t pattern);
inline bool is_risky(ExponentRisk r) { return r == ExponentRisk::kFullMinusOne || r == ExponentRisk::kPartialMinusOne; }

struct RiskyScanRow {
  int pset = 0;
  std::string layer;
  ParamRole role = ParamRole::kConvKernel;
  std::uint64_t total = 0;
  std::uint64_t full_minus_one = 0;
  std::uint64_t partial_minus_one = 0;
  std::uint64_t exponent_128 = 0;
  /// Risky elements that no single exponent step can improve (01111110).
  std::uint64_t non_protectable = 0;
  std::vector<std::size_t> full_elements;
  std::vector<std::size_t> partial_elements;
  std::vector<std::size_t> exponent_128_elements;

  std::uint64_t risky() const { return full_minus_one + partial_minus_one; }
};

std::vector<RiskyScanRow> risky_exponent_scan(const ModelGraph& graph);
/// Sum of risky() over all rows.
std::uint64_t risky_count(const ModelGraph& graph);
std::string risky_scan_csv(std::span<const RiskyScanRow> rows);

/// Smallest k with x in [-2^(k-1), 2^(k-1) - 1].
int twos_complement_width(std::int64_t x);

struct BitsNeededRow {
  int pset = 0;
  std::string layer;
  ParamRole role = ParamRole::kConvKernel;
  Encoding encoding = Encoding::kI8;
  std::optional<std::int64_t> max_positive;
  std::optional<std::int64_t> min_negative;
  std::optional<int> positive_bits;
  std::optional<int> negative_bits;
};

std::vector<BitsNeededRow> bits_needed_table(const ModelGraph& graph);
/// Columns: Name,Role,Pos. bits,Neg. bits (empty when the sign is absent).
std::string bits_needed_csv(std::span<const BitsNeededRow> rows);

struct CalibrationReport {
  std::vector<ParameterStats> parameters;
  /// Activation values (dequantized for quantized graphs) merged over inputs.
  ActivationTrace activations;
  std::size_t inputs = 0;
};

CalibrationReport calibration_report(const ModelGraph& graph, std::span<const Tensor> inputs);
std::string calibration_report_json(const ModelGraph& graph, const CalibrationReport& report);

/// Pearson correlation; kInvalidArgument for unequal lengths, fewer than two
/// points, or a constant series.
double correlate(std::span<const double> a, std::span<const double> b);

}  // namespace seuforge
