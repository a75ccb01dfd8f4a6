#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seuforge/analysis.hpp"
#include "seuforge/campaign.hpp"
#include "seuforge/model.hpp"

namespace seuforge {

/// Significand thresholds (significand in [1, 2)).
struct ProtectionTarget {
  int level = 2;
  double full_threshold = 1.99;
  double empty_threshold = 1.01;

  /// PT1..PT4.
  static ProtectionTarget pt(int level);
};

enum class CandidateClass : std::uint8_t {
  kIncrement,
  kDecrement,
  kEither,
  kNonProtectable,
  kNotCandidate,
};

std::string_view to_string(CandidateClass c);

/// Risky exponents (see classify_exponent) plus exponent 10000000. A step
/// direction is legal when it strictly increases the number of zeros in the
/// exponent (all eight bits for 01111111, the low seven otherwise), minus the
/// exclusions: 01111110 both ways, 01111101 upwards, 10000000 entirely.
/// NaN and infinity are rejected.
CandidateClass classify_candidate(std::uint32_t pattern);

enum class ProtectionRule : std::uint8_t {
  kExponentUpMantissaMin,
  kExponentDownMantissaMax,
  kSkippedNonProtectable,
  kSkippedOutsideThresholds,
};

std::string_view to_string(ProtectionRule r);

struct ProtectionRecord {
  int pset = 0;
  std::size_t element = 0;
  ProtectionRule rule = ProtectionRule::kSkippedOutsideThresholds;
  std::uint32_t before = 0;
  std::uint32_t after = 0;
  /// (after - before) / before in value terms; 0 for skipped records.
  double relative_delta = 0.0;

  bool applied() const {
    return rule == ProtectionRule::kExponentUpMantissaMin || rule == ProtectionRule::kExponentDownMantissaMax;
  }
};

struct ProtectionReport {
  ProtectionTarget target;
  std::vector<ProtectionRecord> records;
  std::uint64_t risky_before = 0;
  std::uint64_t risky_after = 0;

  std::size_t applied() const;
  /// Bound on |relative_delta| for an applied record: 2/full - 1 upwards,
  /// 1 - (1 - 2^-24)/empty downwards.
  static double delta_bound(const ProtectionTarget& t, ProtectionRule rule);
};

struct ProtectionResult {
  ModelGraph graph;
  ProtectionReport report;
};

/// Single pass in p-index order over the f32 sets matching `filter`. A
/// candidate whose significand is >= full moves up one exponent with an
/// empty mantissa; one whose significand is <= empty moves down with a full
/// mantissa. The sign is untouched.
ProtectionResult protect_parameters(const ModelGraph& graph, const ProtectionTarget& target,
                                    const ParamFilter& filter = ParamFilter::all());

std::string protection_report_jsonl(const ProtectionReport& report);
/// Per-target summary: variant,PT,candidates,applied,non_protectable,outside_thresholds,risky_before,risky_after
std::string protection_summary_csv(const std::string& variant, std::span<const ProtectionReport> reports);

struct ProtectionEvaluationOptions {
  /// Bit positions to attack on previously risky parameters.
  std::vector<int> bits = {30};
  /// 0 = exhaustive; otherwise a seeded sample of at most this many per bit.
  std::uint64_t max_faults_per_bit = 0;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct ProtectionBitRow {
  int bit = 0;
  std::uint64_t faults = 0;
  MetricBundle original;
  MetricBundle protected_model;
  double original_error = 0.0;
  double protected_error = 0.0;
  std::uint64_t original_nan = 0;
  std::uint64_t protected_nan = 0;
};

struct ProtectionEvaluation {
  MetricBundle original_faultless;
  /// error_rate here is the protected model's faultless drift from the original.
  MetricBundle protected_faultless;
  std::vector<ProtectionBitRow> bits;
};

/// Flips the given bits of every parameter that is risky in either graph
/// and compares both models. Labels default to the original model's own
/// predictions when `labels` is empty.
ProtectionEvaluation evaluate_protection(const ModelGraph& original, const ModelGraph& protected_graph,
                                         std::span<const Tensor> images, std::span<const ClassMap> labels,
                                         const ProtectionEvaluationOptions& options = {});

struct ReconditionStrategy {
  enum class Kind : std::uint8_t { kIdentity, kFixedScale, kMinimizeRisk };
  Kind kind = Kind::kMinimizeRisk;
  /// kFixedScale factor k (gamma' = k gamma, sigma' = k^2 (sigma + eps) - eps).
  double scale = 1.0;
  /// kMinimizeRisk searches k = 2^j for j in [min_log2, max_log2].
  int min_log2 = -3;
  int max_log2 = 3;
};

struct ReconditionResult {
  ModelGraph graph;
  std::uint64_t risky_before = 0;
  std::uint64_t risky_after = 0;
  std::size_t channels_changed = 0;
};

/// Rewrites (gamma, sigma) of every batch-norm channel so that
/// gamma / sqrt(sigma + eps) and beta - gamma mu / sqrt(sigma + eps) are kept.
ReconditionResult recondition_bn(const ModelGraph& graph, const ReconditionStrategy& strategy = {});

/// Divides output channel i of `producer` by scales[i] and multiplies the
/// matching input slices of every downstream convolution by it. The producer
/// is the affine layer in front of the activation: a batch-norm in unfolded
/// graphs (a conv name there resolves to its batch-norm), a convolution
/// otherwise. Paths may pass ReLU, max-pool and concat. Power-of-two scales
/// keep the network function bit-exact.
ModelGraph cross_layer_equalize(const ModelGraph& graph, const std::string& producer, std::span<const double> scales);

/// Range-equalizing scales sqrt(r_n / r_{n+1}) per channel, rounded to powers of two.
std::vector<double> equalization_scales(const ModelGraph& graph, const std::string& producer);
/// Per-channel power-of-two scale in [2^min_log2, 2^max_log2] that minimizes
/// the risky count of the parameters it touches (ties favour 1).
std::vector<double> risk_minimizing_scales(const ModelGraph& graph, const std::string& producer, int min_log2 = -3,
                                           int max_log2 = 3);

/// Moves c out of `producer`'s shift (beta, or the conv bias when folded)
/// into the consumers' biases: b_n - c and W_{n+1} c + b_{n+1}. Refused with
/// the first violating channel when a ReLU on the path would not commute
/// (c != 0 and min pre-activation < max(c, 0) on the witnesses), and for
/// consumers where a zero-padded border or a transposed conv breaks
/// the shift (only 1x1 or valid-padding convolutions qualify).
ModelGraph absorb_bias(const ModelGraph& graph, const std::string& producer, std::span<const double> c,
                       std::span<const Tensor> witnesses);

/// Largest safe amount per channel: its minimum pre-activation
/// over the witnesses, clamped at zero.
std::vector<double> absorbable_amounts(const ModelGraph& graph, const std::string& producer,
                                       std::span<const Tensor> witnesses);

}  // namespace seuforge
