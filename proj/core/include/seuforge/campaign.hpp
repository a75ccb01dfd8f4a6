#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seuforge/fault.hpp"
#include "seuforge/kernels.hpp"
#include "seuforge/model.hpp"

namespace seuforge {

/// Minimum injections for margin e at z-value t and prior p over a fault
/// space of N: N / (1 + e^2 (N - 1) / (t^2 p (1 - p))), rounded up, at most N.
std::uint64_t sample_size(std::uint64_t N, double e, double t, double p);

/// Percentage of pixels whose class differs; an INVALID pixel never matches.
double error_rate(const ClassMap& golden, const ClassMap& faulty);

struct ClassMetrics {
  double recall = 100.0;
  double precision = 100.0;
  double iou = 100.0;
  std::uint64_t support = 0;
};

/// All values in percent. Global is micro-averaged over pixels; weighted is
/// the per-class mean weighted by label frequency. A ratio with a zero
/// denominator counts as 100.
struct MetricBundle {
  std::vector<ClassMetrics> per_class;
  ClassMetrics global;
  ClassMetrics weighted;
  /// Pixel mismatch against the reference map given to the accumulator.
  double error_rate = 0.0;
};

/// Confusion counts accumulated over any number of images. Predictions of
/// kInvalidClass count as false negatives of the true class only.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t class_count);

  void add(const ClassMap& prediction, const ClassMap& labels);
  /// Also tracks mismatches against `reference` for the error rate.
  void add(const ClassMap& prediction, const ClassMap& labels, const ClassMap& reference);

  void merge(const ConfusionMatrix& other);

  std::size_t class_count() const { return classes_; }
  /// counts()[truth * (class_count + 1) + predicted]; the last column is INVALID.
  const std::vector<std::uint64_t>& counts() const { return counts_; }
  MetricBundle metrics() const;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t pixels_ = 0;
  std::uint64_t mismatches_ = 0;
  bool has_reference_ = false;
};

MetricBundle segmentation_metrics(const ClassMap& prediction, const ClassMap& labels, std::size_t class_count);

/// Percent of pixels in each class over a set of maps (INVALID excluded from
/// the numerators, included in the total).
std::vector<double> class_shares(std::span<const ClassMap> maps, std::size_t class_count);

enum class CampaignMode : std::uint8_t { kSingleBitSweep, kMultiBitRandom };

std::string_view to_string(CampaignMode mode);

struct SweepTarget {
  int pset = 1;
  int bit_lo = 0;
  int bit_hi = 31;
  /// Injections drawn for this set (distinct (element, bit) pairs).
  std::uint64_t n = 1;
  /// Eligible (element, bit) pairs.
  std::uint64_t space = 0;
};

struct CampaignPlan {
  CampaignMode mode = CampaignMode::kSingleBitSweep;
  std::uint64_t seed = 0;
  std::string image_set_id;
  std::uint64_t model_hash = 0;
  double margin = 0.025;
  double z = 1.96;
  double prior = 0.5;
  // single-bit sweep
  std::vector<SweepTarget> targets;
  /// Pre-generated fault list, in target order; seed_ordinal = position.
  std::vector<FaultSpec> faults;
  // multi-bit random
  std::vector<std::uint64_t> flip_counts;
  std::uint64_t repetitions = 0;
};

struct SweepOptions {
  ParamFilter filter = ParamFilter::all();
  int bit_lo = 0;
  int bit_hi = 31;
  /// Fixed n per target; when unset n follows sample_size() on each target's space.
  std::optional<std::uint64_t> n;
  /// Every (element, bit) pair of each target instead of a sample.
  bool exhaustive = false;
  double margin = 0.025;
  double z = 1.96;
  double prior = 0.5;
  std::uint64_t seed = 0;
  std::string image_set_id;
};

/// Targets are the selected parameter sets in p-index order. Faults within
/// a target are sampled without replacement and listed in ascending
/// (element, bit) order. Throws kInvalidArgument when the bit range exceeds a
/// selected set's encoding width.
CampaignPlan plan_single_bit_sweep(const ModelGraph& graph, const SweepOptions& options);

struct FaultOutcome {
  FaultSpec spec;
  std::uint32_t original_bits = 0;
  std::uint32_t faulty_bits = 0;
  double original_value = 0.0;
  double faulty_value = 0.0;
  std::vector<double> image_error;
  double mean_error = 0.0;
  bool produced_nan = false;
  bool produced_inf = false;
  bool sign_changed = false;
  bool magnitude_increased = false;
  /// Non-empty when the fault could not be evaluated.
  std::string failure;
};

struct SweepCell {
  int pset = 0;
  int bit = 0;
  std::uint64_t n = 0;
  double mean_error = 0.0;
  std::uint64_t nan_count = 0;
  std::uint64_t inf_count = 0;
};

struct SweepResult {
  std::vector<FaultOutcome> outcomes;
  /// One row per (pset, bit) with at least one evaluated fault, sorted.
  std::vector<SweepCell> table;
};

/// Called with (fault index, image index, faulty class map). Calls for one
/// fault happen on one thread; different faults may run concurrently.
using FaultObserver = std::function<void(std::size_t, std::size_t, const ClassMap&)>;

/// Workers below 1 mean 1. Results do not depend on the worker count.
std::vector<FaultOutcome> run_fault_list(const ModelGraph& graph, std::span<const FaultSpec> faults,
                                         std::span<const Tensor> images, std::size_t workers = 1,
                                         const FaultObserver& observe = {});

SweepResult run_single_bit_sweep(const ModelGraph& graph, const CampaignPlan& plan, std::span<const Tensor> images,
                                 std::size_t workers = 1);

std::vector<SweepCell> aggregate_outcomes(std::span<const FaultOutcome> outcomes);

struct MultiBitOptions {
  std::vector<std::uint64_t> counts;
  std::uint64_t repetitions = 150;
  std::uint64_t seed = 0;
  ParamFilter filter = ParamFilter::all();
};

struct MultiBitPoint {
  std::uint64_t count = 0;
  double mean_error = 0.0;
  /// Sample standard deviation over repetitions (0 with fewer than two).
  double stddev = 0.0;
  std::vector<double> samples;
};

/// Each repetition flips `count` distinct (element, bit) pairs drawn
/// uniformly from the whole selected fault space, evaluates, and reverts.
std::vector<MultiBitPoint> run_multi_bit_campaign(const ModelGraph& graph, const MultiBitOptions& options,
                                                  std::span<const Tensor> images, std::size_t workers = 1);

CampaignPlan plan_multi_bit_campaign(const ModelGraph& graph, const MultiBitOptions& options,
                                     std::string image_set_id = {});

/// Linearly weighted mean over bits lo..hi: w_b proportional to b - lo + 1.
double weighted_bit_error(std::span<const double> rates, int lo, int hi);

/// Mean of per-class bit-30 terms (already sign-adjusted percentages).
double predict_bit30_error_from_terms(std::span<const double> terms);
/// Flipping bit 30 of a small output bias makes it huge with the same sign:
/// a negative one erases its class (error = share_j), a positive one paints
/// every pixel with it (error = 100 - share_j). Returns the class mean.
/// `bias_signs` holds the output biases (or just their signs).
double predict_bit30_error(std::span<const double> bias_signs, std::span<const double> class_shares);

struct SignBitPrediction {
  double estimate = 0.0;
  /// Sign flips of integer biases swing the logit by about 2^31 codes in
  /// the other direction; observed rates vary strongly, so treat as rough.
  bool high_variance = true;
};

/// Integer sign bit: the flipped bias jumps to a huge value of the opposite
/// sign, so each class contributes the complement of its bit-30 term.
SignBitPrediction predict_sign_bit_error_quantized(std::span<const double> bias_signs,
                                                   std::span<const double> class_shares);
SignBitPrediction predict_sign_bit_error_from_terms(std::span<const double> bit30_terms);

/// Per-class bit-30 term: share for a negative bias, 100 - share otherwise.
std::vector<double> bit30_terms(std::span<const double> bias_signs, std::span<const double> class_shares);

}  // namespace seuforge
