#include "seuforge/campaign.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <thread>

#include "seuforge/error.hpp"
#include "seuforge/inference.hpp"
#include "seuforge/rng.hpp"

namespace seuforge {

std::uint64_t sample_size(std::uint64_t N, double e, double t, double p) {
  if (N < 1) fail(ErrorCode::kInvalidArgument, "fault space N must be at least 1");
  if (!(e > 0.0 && e < 1.0)) fail(ErrorCode::kInvalidArgument, "margin e must lie in (0, 1)");
  if (!(t > 0.0)) fail(ErrorCode::kInvalidArgument, "z-value t must be positive");
  if (!(p > 0.0 && p < 1.0)) fail(ErrorCode::kInvalidArgument, "prior p must lie in (0, 1)");
  const long double n = static_cast<long double>(N);
  const long double denom =
      1.0L + static_cast<long double>(e) * e * (n - 1.0L) / (static_cast<long double>(t) * t * p * (1.0 - p));
  const long double raw = n / denom;
  // Guard against a representation error pushing an exact integer over.
  const long double nearest = std::round(raw);
  const long double rounded = std::fabs(raw - nearest) < 1e-9L ? nearest : std::ceil(raw);
  return std::clamp<std::uint64_t>(static_cast<std::uint64_t>(rounded), 1, N);
}

namespace {

void require_same_shape(const ClassMap& a, const ClassMap& b, const char* what) {
  if (a.n != b.n || a.h != b.h || a.w != b.w || a.size() != b.size()) {
    fail(ErrorCode::kShapeMismatch, std::string(what) + ": maps of " + std::to_string(a.n) + "x" +
                                        std::to_string(a.h) + "x" + std::to_string(a.w) + " and " +
                                        std::to_string(b.n) + "x" + std::to_string(b.h) + "x" + std::to_string(b.w));
  }
}

double percent(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 100.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double error_rate(const ClassMap& golden, const ClassMap& faulty) {
  require_same_shape(golden, faulty, "error_rate");
  if (golden.size() == 0) return 0.0;
  std::uint64_t diff = 0;
  for (std::size_t i = 0; i < golden.size(); ++i) {
    diff += golden.labels[i] != faulty.labels[i] || faulty.labels[i] == kInvalidClass;
  }
  return percent(diff, golden.size());
}

ConfusionMatrix::ConfusionMatrix(std::size_t class_count)
    : classes_(class_count), counts_(class_count * (class_count + 1), 0) {
  if (class_count == 0) fail(ErrorCode::kInvalidArgument, "class count must be positive");
}

void ConfusionMatrix::add(const ClassMap& prediction, const ClassMap& labels) {
  require_same_shape(prediction, labels, "segmentation_metrics");
  const auto c = static_cast<std::int32_t>(classes_);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto t = labels.labels[i];
    const auto p = prediction.labels[i];
    if (t < 0 || t >= c) fail(ErrorCode::kOutOfRange, "label class " + std::to_string(t) + " outside 0.." + std::to_string(c - 1));
    if (p != kInvalidClass && (p < 0 || p >= c)) {
      fail(ErrorCode::kOutOfRange, "predicted class " + std::to_string(p) + " outside 0.." + std::to_string(c - 1));
    }
    const std::size_t col = p == kInvalidClass ? classes_ : static_cast<std::size_t>(p);
    ++counts_[static_cast<std::size_t>(t) * (classes_ + 1) + col];
  }
  pixels_ += labels.size();
}

void ConfusionMatrix::add(const ClassMap& prediction, const ClassMap& labels, const ClassMap& reference) {
  add(prediction, labels);
  require_same_shape(prediction, reference, "error_rate");
  for (std::size_t i = 0; i < reference.size(); ++i) {
    mismatches_ += reference.labels[i] != prediction.labels[i] || prediction.labels[i] == kInvalidClass;
  }
  has_reference_ = true;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) fail(ErrorCode::kShapeMismatch, "cannot merge confusion matrices of different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  pixels_ += other.pixels_;
  mismatches_ += other.mismatches_;
  has_reference_ = has_reference_ || other.has_reference_;
}

MetricBundle ConfusionMatrix::metrics() const {
  MetricBundle m;
  const std::size_t stride = classes_ + 1;
  std::uint64_t tp_sum = 0, fp_sum = 0, fn_sum = 0, total = 0;
  for (std::size_t k = 0; k < classes_; ++k) {
    std::uint64_t tp = counts_[k * stride + k], fn = 0, fp = 0;
    for (std::size_t j = 0; j < stride; ++j) {
      if (j != k) fn += counts_[k * stride + j];
    }
    for (std::size_t i = 0; i < classes_; ++i) {
      if (i != k) fp += counts_[i * stride + k];
    }
    ClassMetrics cm;
    cm.support = tp + fn;
    cm.recall = percent(tp, tp + fn);
    cm.precision = percent(tp, tp + fp);
    cm.iou = percent(tp, tp + fp + fn);
    m.per_class.push_back(cm);
    tp_sum += tp;
    fp_sum += fp;
    fn_sum += fn;
    total += cm.support;
  }
  m.global.support = total;
  m.global.recall = percent(tp_sum, tp_sum + fn_sum);
  m.global.precision = percent(tp_sum, tp_sum + fp_sum);
  m.global.iou = percent(tp_sum, tp_sum + fp_sum + fn_sum);
  m.weighted.support = total;
  if (total == 0) {
    m.weighted.recall = m.weighted.precision = m.weighted.iou = 100.0;
  } else {
    m.weighted.recall = m.weighted.precision = m.weighted.iou = 0.0;
    for (const auto& cm : m.per_class) {
      const double w = static_cast<double>(cm.support) / static_cast<double>(total);
      m.weighted.recall += w * cm.recall;
      m.weighted.precision += w * cm.precision;
      m.weighted.iou += w * cm.iou;
    }
  }
  if (has_reference_) {
    m.error_rate = percent(mismatches_, pixels_);
  } else {
    // Without a separate reference the labels are the reference.
    m.error_rate = pixels_ == 0 ? 0.0 : percent(pixels_ - tp_sum, pixels_);
  }
  return m;
}

MetricBundle segmentation_metrics(const ClassMap& prediction, const ClassMap& labels, std::size_t class_count) {
  ConfusionMatrix cm(class_count);
  cm.add(prediction, labels);
  return cm.metrics();
}

std::vector<double> class_shares(std::span<const ClassMap> maps, std::size_t class_count) {
  std::vector<std::uint64_t> counts(class_count, 0);
  std::uint64_t total = 0;
  for (const auto& m : maps) {
    for (auto l : m.labels) {
      if (l >= 0 && static_cast<std::size_t>(l) < class_count) ++counts[static_cast<std::size_t>(l)];
    }
    total += m.size();
  }
  std::vector<double> shares(class_count, 0.0);
  for (std::size_t k = 0; k < class_count; ++k) {
    shares[k] = total == 0 ? 0.0 : 100.0 * static_cast<double>(counts[k]) / static_cast<double>(total);
  }
  return shares;
}

std::string_view to_string(CampaignMode mode) {
  return mode == CampaignMode::kSingleBitSweep ? "single-bit-sweep" : "multi-bit-random";
}

CampaignPlan plan_single_bit_sweep(const ModelGraph& graph, const SweepOptions& o) {
  if (o.bit_lo < 0 || o.bit_hi < o.bit_lo) {
    fail(ErrorCode::kInvalidArgument, "bit range [" + std::to_string(o.bit_lo) + ", " + std::to_string(o.bit_hi) + "] is empty");
  }
  if (o.n && *o.n == 0) fail(ErrorCode::kInvalidArgument, "injections per target must be at least 1");
  CampaignPlan plan;
  plan.mode = CampaignMode::kSingleBitSweep;
  plan.seed = o.seed;
  plan.image_set_id = o.image_set_id;
  plan.model_hash = model_hash(graph);
  plan.margin = o.margin;
  plan.z = o.z;
  plan.prior = o.prior;
  const std::uint64_t bits = static_cast<std::uint64_t>(o.bit_hi - o.bit_lo + 1);
  for (const auto& p : graph.params) {
    if (!o.filter.matches(p)) continue;
    const int width = bit_width(p.tensor.encoding());
    if (o.bit_hi >= width) {
      fail(ErrorCode::kInvalidArgument,
           "bit range [" + std::to_string(o.bit_lo) + ", " + std::to_string(o.bit_hi) + "] exceeds the " +
               std::to_string(width) + "-bit " + std::string(to_string(p.tensor.encoding())) + " set p" +
               std::to_string(p.index) + " (" + p.layer + "/" + std::string(to_string(p.role)) +
               "); restrict the range to 0.." + std::to_string(width - 1) + " or filter out that set");
    }
    SweepTarget t{p.index, o.bit_lo, o.bit_hi, 0, static_cast<std::uint64_t>(p.tensor.size()) * bits};
    if (o.exhaustive) {
      t.n = t.space;
    } else if (o.n) {
      t.n = std::min(*o.n, t.space);
    } else {
      t.n = sample_size(t.space, o.margin, o.z, o.prior);
    }
    Rng rng(mix_seed(o.seed, static_cast<std::uint64_t>(p.index)));
    std::vector<std::uint64_t> picks;
    if (t.n == t.space) {
      picks.resize(t.space);
      std::iota(picks.begin(), picks.end(), std::uint64_t{0});
    } else {
      picks = sample_distinct(rng, t.space, t.n);
    }
    for (auto idx : picks) {
      FaultSpec f{p.index, static_cast<std::size_t>(idx / bits), o.bit_lo + static_cast<int>(idx % bits),
                  p.tensor.encoding(), plan.faults.size()};
      plan.faults.push_back(f);
    }
    plan.targets.push_back(t);
  }
  return plan;
}

namespace {

struct ImageContext {
  std::vector<GoldenRun> golden;
};

ImageContext golden_runs(const ModelGraph& graph, std::span<const Tensor> images) {
  ImageContext ctx;
  ctx.golden.reserve(images.size());
  for (const auto& img : images) ctx.golden.push_back(run_golden(graph, img));
  return ctx;
}

/// Runs `job(worker_index, graph_copy, runners, item)` for items
/// worker, worker + k, ... in k threads.
template <typename Job>
void parallel_items(const ModelGraph& graph, const ImageContext& ctx, std::size_t items, std::size_t workers,
                    Job job) {
  workers = std::max<std::size_t>(1, std::min(workers, std::max<std::size_t>(items, 1)));
  auto body = [&](std::size_t w) {
    ModelGraph copy = graph;
    std::vector<IncrementalRunner> runners;
    runners.reserve(ctx.golden.size());
    for (const auto& g : ctx.golden) runners.emplace_back(copy, g);
    for (std::size_t i = w; i < items; i += workers) job(copy, runners, i);
  };
  if (workers == 1) {
    body(0);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        body(w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

std::vector<FaultOutcome> run_fault_list(const ModelGraph& graph, std::span<const FaultSpec> faults,
                                         std::span<const Tensor> images, std::size_t workers,
                                         const FaultObserver& observe) {
  const ImageContext ctx = golden_runs(graph, images);
  std::vector<FaultOutcome> outcomes(faults.size());
  parallel_items(graph, ctx, faults.size(), workers,
                 [&](ModelGraph& g, std::vector<IncrementalRunner>& runners, std::size_t i) {
                   FaultOutcome& o = outcomes[i];
                   o.spec = faults[i];
                   try {
                     FaultInjector inj(g);
                     const auto& t = g.pset(o.spec.pset).tensor;
                     validate_fault(g, o.spec);
                     o.original_bits = t.bits(o.spec.element);
                     o.original_value = t.value(o.spec.element);
                     const auto token = inj.apply(o.spec);
                     o.faulty_bits = t.bits(o.spec.element);
                     o.faulty_value = t.value(o.spec.element);
                     const std::size_t layer = g.layer_of_pset(o.spec.pset);
                     o.image_error.reserve(runners.size());
                     for (std::size_t k = 0; k < runners.size(); ++k) {
                       const ClassMap faulty = runners[k].rerun(std::span(&layer, 1));
                       o.image_error.push_back(error_rate(ctx.golden[k].classes, faulty));
                       if (observe) observe(i, k, faulty);
                     }
                     inj.revert(token);
                   } catch (const std::exception& e) {
                     o.failure = e.what();
                   }
                   o.mean_error = mean_of(o.image_error);
                   o.produced_nan = std::isnan(o.faulty_value);
                   o.produced_inf = std::isinf(o.faulty_value);
                   o.sign_changed = !std::isnan(o.faulty_value) && std::signbit(o.faulty_value) != std::signbit(o.original_value);
                   o.magnitude_increased = !std::isnan(o.faulty_value) && std::fabs(o.faulty_value) > std::fabs(o.original_value);
                 });
  return outcomes;
}

std::vector<SweepCell> aggregate_outcomes(std::span<const FaultOutcome> outcomes) {
  std::map<std::pair<int, int>, std::pair<SweepCell, double>> cells;
  for (const auto& o : outcomes) {
    if (!o.failure.empty()) continue;
    auto& [cell, sum] = cells[{o.spec.pset, o.spec.bit}];
    cell.pset = o.spec.pset;
    cell.bit = o.spec.bit;
    ++cell.n;
    sum += o.mean_error;
    cell.nan_count += o.produced_nan;
    cell.inf_count += o.produced_inf;
  }
  std::vector<SweepCell> table;
  table.reserve(cells.size());
  for (auto& [key, entry] : cells) {
    entry.first.mean_error = entry.second / static_cast<double>(entry.first.n);
    table.push_back(entry.first);
  }
  return table;
}

SweepResult run_single_bit_sweep(const ModelGraph& graph, const CampaignPlan& plan, std::span<const Tensor> images,
                                 std::size_t workers) {
  if (plan.mode != CampaignMode::kSingleBitSweep) fail(ErrorCode::kInvalidArgument, "plan is not a single-bit sweep");
  SweepResult r;
  r.outcomes = run_fault_list(graph, plan.faults, images, workers);
  r.table = aggregate_outcomes(r.outcomes);
  return r;
}

namespace {

struct SpaceIndex {
  std::vector<const ParamSet*> sets;
  std::vector<std::uint64_t> starts;  // cumulative (elements * width)
  std::uint64_t total = 0;

  FaultSpec locate(std::uint64_t idx) const {
    const auto it = std::upper_bound(starts.begin(), starts.end(), idx);
    const std::size_t s = static_cast<std::size_t>(it - starts.begin()) - 1;
    const std::uint64_t local = idx - starts[s];
    const auto width = static_cast<std::uint64_t>(bit_width(sets[s]->tensor.encoding()));
    return {sets[s]->index, static_cast<std::size_t>(local / width), static_cast<int>(local % width),
            sets[s]->tensor.encoding(), idx};
  }
};

SpaceIndex space_of(const ModelGraph& graph, const ParamFilter& filter) {
  SpaceIndex s;
  for (const auto& p : graph.params) {
    if (!filter.matches(p)) continue;
    s.sets.push_back(&p);
    s.starts.push_back(s.total);
    s.total += static_cast<std::uint64_t>(p.tensor.size()) * bit_width(p.tensor.encoding());
  }
  return s;
}

std::vector<FaultSpec> multi_bit_faults(const SpaceIndex& space, std::uint64_t seed, std::uint64_t count,
                                        std::uint64_t rep) {
  Rng rng(mix_seed(mix_seed(seed, count), rep));
  std::vector<FaultSpec> faults;
  faults.reserve(count);
  for (auto idx : sample_distinct(rng, space.total, count)) faults.push_back(space.locate(idx));
  return faults;
}

}  // namespace

CampaignPlan plan_multi_bit_campaign(const ModelGraph& graph, const MultiBitOptions& options,
                                     std::string image_set_id) {
  const auto space = space_of(graph, options.filter);
  for (auto c : options.counts) {
    if (c > space.total) {
      fail(ErrorCode::kInvalidArgument, "flip count " + std::to_string(c) + " exceeds the fault space of " +
                                            std::to_string(space.total));
    }
  }
  CampaignPlan plan;
  plan.mode = CampaignMode::kMultiBitRandom;
  plan.seed = options.seed;
  plan.image_set_id = std::move(image_set_id);
  plan.model_hash = model_hash(graph);
  plan.flip_counts = options.counts;
  plan.repetitions = options.repetitions;
  return plan;
}

std::vector<MultiBitPoint> run_multi_bit_campaign(const ModelGraph& graph, const MultiBitOptions& options,
                                                  std::span<const Tensor> images, std::size_t workers) {
  (void)plan_multi_bit_campaign(graph, options);
  if (options.repetitions == 0) fail(ErrorCode::kInvalidArgument, "repetitions must be at least 1");
  const auto space = space_of(graph, options.filter);
  const ImageContext ctx = golden_runs(graph, images);
  const std::size_t reps = static_cast<std::size_t>(options.repetitions);
  const std::size_t jobs = options.counts.size() * reps;
  std::vector<double> results(jobs, 0.0);
  parallel_items(graph, ctx, jobs, workers, [&](ModelGraph& g, std::vector<IncrementalRunner>& runners, std::size_t j) {
    const std::uint64_t count = options.counts[j / reps];
    if (count == 0) return;
    const auto faults = multi_bit_faults(space, options.seed, count, j % reps);
    FaultInjector inj(g);
    std::set<std::size_t> layers;
    for (const auto& f : faults) {
      inj.apply(f);
      layers.insert(g.layer_of_pset(f.pset));
    }
    const std::vector<std::size_t> changed(layers.begin(), layers.end());
    double sum = 0.0;
    for (std::size_t k = 0; k < runners.size(); ++k) {
      sum += error_rate(ctx.golden[k].classes, runners[k].rerun(changed));
    }
    inj.revert_all();
    results[j] = runners.empty() ? 0.0 : sum / static_cast<double>(runners.size());
  });
  std::vector<MultiBitPoint> points;
  for (std::size_t c = 0; c < options.counts.size(); ++c) {
    MultiBitPoint pt;
    pt.count = options.counts[c];
    pt.samples.assign(results.begin() + static_cast<std::ptrdiff_t>(c * reps),
                      results.begin() + static_cast<std::ptrdiff_t>((c + 1) * reps));
    pt.mean_error = mean_of(pt.samples);
    if (pt.samples.size() > 1) {
      double ss = 0.0;
      for (double x : pt.samples) ss += (x - pt.mean_error) * (x - pt.mean_error);
      pt.stddev = std::sqrt(ss / static_cast<double>(pt.samples.size() - 1));
    }
    points.push_back(std::move(pt));
  }
  return points;
}

double weighted_bit_error(std::span<const double> rates, int lo, int hi) {
  if (hi < lo) fail(ErrorCode::kInvalidArgument, "bit range is empty");
  if (rates.size() != static_cast<std::size_t>(hi - lo + 1)) {
    fail(ErrorCode::kShapeMismatch, "expected " + std::to_string(hi - lo + 1) + " per-bit rates, got " +
                                        std::to_string(rates.size()));
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    const double w = static_cast<double>(i + 1);
    num += w * rates[i];
    den += w;
  }
  return num / den;
}

double predict_bit30_error_from_terms(std::span<const double> terms) {
  if (terms.empty()) fail(ErrorCode::kInvalidArgument, "predictor needs at least one class");
  double s = 0.0;
  for (double t : terms) s += t;
  return s / static_cast<double>(terms.size());
}

std::vector<double> bit30_terms(std::span<const double> bias_signs, std::span<const double> class_shares) {
  if (bias_signs.size() != class_shares.size()) {
    fail(ErrorCode::kShapeMismatch, std::to_string(bias_signs.size()) + " bias signs but " +
                                        std::to_string(class_shares.size()) + " class shares");
  }
  std::vector<double> terms(bias_signs.size());
  for (std::size_t j = 0; j < terms.size(); ++j) {
    terms[j] = std::signbit(bias_signs[j]) ? class_shares[j] : 100.0 - class_shares[j];
  }
  return terms;
}

double predict_bit30_error(std::span<const double> bias_signs, std::span<const double> class_shares) {
  return predict_bit30_error_from_terms(bit30_terms(bias_signs, class_shares));
}

SignBitPrediction predict_sign_bit_error_from_terms(std::span<const double> bit30_terms) {
  return {100.0 - predict_bit30_error_from_terms(bit30_terms), true};
}

SignBitPrediction predict_sign_bit_error_quantized(std::span<const double> bias_signs,
                                                   std::span<const double> class_shares) {
  return predict_sign_bit_error_from_terms(bit30_terms(bias_signs, class_shares));
}

}  // namespace seuforge
