#include "seuforge/protection.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "seuforge/campaign_io.hpp"
#include "seuforge/error.hpp"
#include "seuforge/inference.hpp"
#include "seuforge/rng.hpp"

namespace seuforge {

using ojson = nlohmann::ordered_json;

ProtectionTarget ProtectionTarget::pt(int level) {
  switch (level) {
    case 1: return {1, 1.999, 1.001};
    case 2: return {2, 1.99, 1.01};
    case 3: return {3, 1.95, 1.05};
    case 4: return {4, 1.9, 1.1};
    default: fail(ErrorCode::kInvalidArgument, "protection target must be 1..4, got " + std::to_string(level));
  }
}

std::string_view to_string(CandidateClass c) {
  switch (c) {
    case CandidateClass::kIncrement: return "increment";
    case CandidateClass::kDecrement: return "decrement";
    case CandidateClass::kEither: return "either";
    case CandidateClass::kNonProtectable: return "non_protectable";
    case CandidateClass::kNotCandidate: return "not_candidate";
  }
  return "?";
}

std::string_view to_string(ProtectionRule r) {
  switch (r) {
    case ProtectionRule::kExponentUpMantissaMin: return "exponent_up_mantissa_min";
    case ProtectionRule::kExponentDownMantissaMax: return "exponent_down_mantissa_max";
    case ProtectionRule::kSkippedNonProtectable: return "skipped_non_protectable";
    case ProtectionRule::kSkippedOutsideThresholds: return "skipped_outside_thresholds";
  }
  return "?";
}

namespace {

struct Exclusion {
  std::uint32_t exponent;
  bool forbid_increment;
  bool forbid_decrement;
};

// Steps that gain a zero on paper but lead nowhere useful.
constexpr Exclusion kExclusions[] = {
    {0x7Eu, true, true},   // 01111110
    {0x7Du, true, false},  // 01111101
    {0x80u, true, true},   // 10000000
};

int zeros_in(std::uint32_t value, int width) { return width - std::popcount(value & ((1u << width) - 1u)); }

}  // namespace

CandidateClass classify_candidate(std::uint32_t pattern) {
  const std::uint32_t e = exponent_field(pattern);
  if (e == 0xFFu) fail(ErrorCode::kInvalidArgument, "classify_candidate needs a finite value");
  const ExponentRisk risk = classify_exponent(pattern);
  if (risk == ExponentRisk::kNone) return CandidateClass::kNotCandidate;
  bool up = false, down = false;
  if (risk == ExponentRisk::kFullMinusOne) {
    up = zeros_in(e + 1, 8) > zeros_in(e, 8);
    down = zeros_in(e - 1, 8) > zeros_in(e, 8);
  } else if (risk == ExponentRisk::kPartialMinusOne) {
    up = (e & 0x7Fu) != 0x7Fu && zeros_in(e + 1, 7) > zeros_in(e, 7) && ((e + 1) & 0x80u) == 0;
    down = (e & 0x7Fu) != 0 && zeros_in(e - 1, 7) > zeros_in(e, 7);
  }
  for (const auto& x : kExclusions) {
    if (x.exponent != e) continue;
    up = up && !x.forbid_increment;
    down = down && !x.forbid_decrement;
  }
  if (up && down) return CandidateClass::kEither;
  if (up) return CandidateClass::kIncrement;
  if (down) return CandidateClass::kDecrement;
  return CandidateClass::kNonProtectable;
}

std::size_t ProtectionReport::applied() const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) { return r.applied(); }));
}

double ProtectionReport::delta_bound(const ProtectionTarget& t, ProtectionRule rule) {
  if (rule == ProtectionRule::kExponentUpMantissaMin) return 2.0 / t.full_threshold - 1.0;
  if (rule == ProtectionRule::kExponentDownMantissaMax) return 1.0 - (1.0 - std::ldexp(1.0, -24)) / t.empty_threshold;
  return 0.0;
}

ProtectionResult protect_parameters(const ModelGraph& graph, const ProtectionTarget& target, const ParamFilter& filter) {
  if (!(target.full_threshold > target.empty_threshold && target.empty_threshold >= 1.0 && target.full_threshold < 2.0)) {
    fail(ErrorCode::kInvalidArgument, "protection thresholds must satisfy 1 <= empty < full < 2");
  }
  ProtectionResult r{graph, {}};
  r.report.target = target;
  r.report.risky_before = risky_count(graph);
  for (auto& p : r.graph.params) {
    if (p.tensor.encoding() != Encoding::kF32 || !filter.matches(p)) continue;
    for (std::size_t i = 0; i < p.tensor.size(); ++i) {
      const std::uint32_t bits = p.tensor.bits(i);
      if (exponent_field(bits) == 0xFFu) continue;
      const CandidateClass cls = classify_candidate(bits);
      if (cls == CandidateClass::kNotCandidate) continue;
      ProtectionRecord rec{p.index, i, ProtectionRule::kSkippedOutsideThresholds, bits, bits, 0.0};
      const std::uint32_t mantissa = bits & 0x7FFFFFu;
      const double significand = 1.0 + std::ldexp(static_cast<double>(mantissa), -23);
      const bool up_ok = cls == CandidateClass::kIncrement || cls == CandidateClass::kEither;
      const bool down_ok = cls == CandidateClass::kDecrement || cls == CandidateClass::kEither;
      const std::uint32_t sign = bits & 0x80000000u;
      const std::uint32_t e = exponent_field(bits);
      if (cls == CandidateClass::kNonProtectable) {
        rec.rule = ProtectionRule::kSkippedNonProtectable;
      } else if (significand >= target.full_threshold && up_ok) {
        rec.rule = ProtectionRule::kExponentUpMantissaMin;
        rec.after = sign | ((e + 1) << 23);
      } else if (significand <= target.empty_threshold && down_ok) {
        rec.rule = ProtectionRule::kExponentDownMantissaMax;
        rec.after = sign | ((e - 1) << 23) | 0x7FFFFFu;
      }
      if (rec.applied()) {
        const double before = std::bit_cast<float>(rec.before);
        const double after = std::bit_cast<float>(rec.after);
        rec.relative_delta = (after - before) / before;
        p.tensor.set_bits(i, rec.after);
      }
      r.report.records.push_back(rec);
    }
  }
  r.report.risky_after = risky_count(r.graph);
  ojson params = {{"pt", target.level},
                  {"full_threshold", target.full_threshold},
                  {"empty_threshold", target.empty_threshold},
                  {"applied", r.report.applied()}};
  r.graph.metadata.transforms.push_back({"protect_parameters", params.dump()});
  return r;
}

std::string protection_report_jsonl(const ProtectionReport& report) {
  std::string out;
  for (const auto& r : report.records) {
    ojson j = {{"pset", r.pset},
               {"element", r.element},
               {"rule", std::string(to_string(r.rule))},
               {"pt", report.target.level},
               {"before_bits", r.before},
               {"after_bits", r.after},
               {"before", format_number(std::bit_cast<float>(r.before))},
               {"after", format_number(std::bit_cast<float>(r.after))},
               {"relative_delta", r.relative_delta}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string protection_summary_csv(const std::string& variant, std::span<const ProtectionReport> reports) {
  std::ostringstream s;
  s << "variant,PT,candidates,applied,non_protectable,outside_thresholds,risky_before,risky_after\n";
  for (const auto& rep : reports) {
    std::size_t non_prot = 0, outside = 0;
    for (const auto& r : rep.records) {
      non_prot += r.rule == ProtectionRule::kSkippedNonProtectable;
      outside += r.rule == ProtectionRule::kSkippedOutsideThresholds;
    }
    s << variant << ",PT" << rep.target.level << ',' << rep.records.size() << ',' << rep.applied() << ',' << non_prot
      << ',' << outside << ',' << rep.risky_before << ',' << rep.risky_after << '\n';
  }
  return s.str();
}

ProtectionEvaluation evaluate_protection(const ModelGraph& original, const ModelGraph& protected_graph,
                                         std::span<const Tensor> images, std::span<const ClassMap> labels,
                                         const ProtectionEvaluationOptions& options) {
  if (original.layers.size() != protected_graph.layers.size() || original.params.size() != protected_graph.params.size()) {
    fail(ErrorCode::kShapeMismatch, "original and protected graphs differ in topology");
  }
  for (std::size_t i = 0; i < original.params.size(); ++i) {
    if (original.params[i].tensor.shape() != protected_graph.params[i].tensor.shape() ||
        original.params[i].tensor.encoding() != protected_graph.params[i].tensor.encoding()) {
      fail(ErrorCode::kShapeMismatch, "original and protected graphs differ at p" + std::to_string(i + 1));
    }
  }
  if (!labels.empty() && labels.size() != images.size()) fail(ErrorCode::kInvalidArgument, "one label map per image");
  const std::size_t classes = original.class_count;
  std::vector<ClassMap> golden;
  for (const auto& x : images) golden.push_back(predict(original, x));
  const std::span<const ClassMap> truth = labels.empty() ? std::span<const ClassMap>(golden) : labels;

  ProtectionEvaluation ev;
  {
    ConfusionMatrix a(classes), b(classes);
    for (std::size_t k = 0; k < images.size(); ++k) {
      a.add(golden[k], truth[k], golden[k]);
      b.add(predict(protected_graph, images[k]), truth[k], golden[k]);
    }
    ev.original_faultless = a.metrics();
    ev.protected_faultless = b.metrics();
  }

  std::vector<std::pair<int, std::size_t>> positions;
  for (std::size_t s = 0; s < original.params.size(); ++s) {
    const auto& po = original.params[s];
    const auto& pp = protected_graph.params[s];
    if (po.tensor.encoding() != Encoding::kF32) continue;
    for (std::size_t i = 0; i < po.tensor.size(); ++i) {
      if (is_risky(classify_exponent(po.tensor.bits(i))) || is_risky(classify_exponent(pp.tensor.bits(i)))) {
        positions.emplace_back(po.index, i);
      }
    }
  }

  for (int bit : options.bits) {
    if (bit < 0 || bit > 31) fail(ErrorCode::kOutOfRange, "bit " + std::to_string(bit) + " outside 0..31");
    std::vector<FaultSpec> faults;
    std::vector<std::uint64_t> picks;
    if (options.max_faults_per_bit > 0 && positions.size() > options.max_faults_per_bit) {
      Rng rng(mix_seed(options.seed, static_cast<std::uint64_t>(bit)));
      picks = sample_distinct(rng, positions.size(), options.max_faults_per_bit);
    } else {
      picks.resize(positions.size());
      for (std::size_t i = 0; i < picks.size(); ++i) picks[i] = i;
    }
    for (auto idx : picks) {
      const auto& [pset, element] = positions[static_cast<std::size_t>(idx)];
      faults.push_back({pset, element, bit, Encoding::kF32, faults.size()});
    }
    ProtectionBitRow row;
    row.bit = bit;
    row.faults = faults.size();
    auto run_side = [&](const ModelGraph& g, MetricBundle& bundle, double& err, std::uint64_t& nans) {
      std::vector<ConfusionMatrix> per_fault(faults.size(), ConfusionMatrix(classes));
      const auto outcomes = run_fault_list(g, faults, images, options.workers,
                                           [&](std::size_t f, std::size_t k, const ClassMap& m) { per_fault[f].add(m, truth[k]); });
      ConfusionMatrix total(classes);
      for (const auto& cm : per_fault) total.merge(cm);
      bundle = total.metrics();
      double sum = 0.0;
      for (const auto& o : outcomes) {
        sum += o.mean_error;
        nans += o.produced_nan;
      }
      err = outcomes.empty() ? 0.0 : sum / static_cast<double>(outcomes.size());
      bundle.error_rate = err;
    };
    run_side(original, row.original, row.original_error, row.original_nan);
    run_side(protected_graph, row.protected_model, row.protected_error, row.protected_nan);
    ev.bits.push_back(std::move(row));
  }
  return ev;
}

namespace {

bool risky_float(float v) { return is_risky(classify_exponent(std::bit_cast<std::uint32_t>(v))); }

bool is_conv_like(LayerKind k) {
  return k == LayerKind::kConv2d || k == LayerKind::kConv2dTranspose || k == LayerKind::kOutputConv;
}

ParamRole kernel_role(LayerKind k) { return k == LayerKind::kConv2dTranspose ? ParamRole::kConvTrKernel : ParamRole::kConvKernel; }
ParamRole bias_role(LayerKind k) { return k == LayerKind::kConv2dTranspose ? ParamRole::kConvTrBias : ParamRole::kConvBias; }

}  // namespace

ReconditionResult recondition_bn(const ModelGraph& graph, const ReconditionStrategy& strategy) {
  if (graph.metadata.quantized || graph.metadata.folded) {
    fail(ErrorCode::kPrecondition, "recondition_bn needs an unfolded float graph");
  }
  if (strategy.kind == ReconditionStrategy::Kind::kFixedScale && !(strategy.scale > 0.0)) {
    fail(ErrorCode::kInvalidArgument, "recondition scale must be positive");
  }
  ReconditionResult r{graph, risky_count(graph), 0, 0};
  if (strategy.kind == ReconditionStrategy::Kind::kIdentity) {
    r.risky_after = r.risky_before;
    return r;
  }
  std::vector<double> candidates;
  if (strategy.kind == ReconditionStrategy::Kind::kFixedScale) {
    candidates = {strategy.scale};
  } else {
    // 0, +1, -1, +2, -2, ... so ties keep the smallest change.
    candidates.push_back(1.0);
    for (int j = 1; j <= std::max(strategy.max_log2, -strategy.min_log2); ++j) {
      if (j <= strategy.max_log2) candidates.push_back(std::ldexp(1.0, j));
      if (-j >= strategy.min_log2) candidates.push_back(std::ldexp(1.0, -j));
    }
  }
  for (const auto& l : r.graph.layers) {
    if (l.kind != LayerKind::kBatchNorm) continue;
    auto gamma = r.graph.param(l.name, ParamRole::kBnGamma).tensor.f32();
    auto sigma = r.graph.param(l.name, ParamRole::kBnVariance).tensor.f32();
    const double eps = l.epsilon;
    for (std::size_t c = 0; c < gamma.size(); ++c) {
      float best_g = gamma[c], best_s = sigma[c];
      int best_cost = risky_float(gamma[c]) + risky_float(sigma[c]);
      bool changed = false;
      for (double k : candidates) {
        if (k == 1.0) continue;
        const double s_new = k * k * (static_cast<double>(sigma[c]) + eps) - eps;
        if (!(s_new >= 0.0)) continue;
        const float g2 = static_cast<float>(k * gamma[c]);
        const float s2 = static_cast<float>(s_new);
        if (!std::isfinite(g2) || !std::isfinite(s2)) continue;
        const int cost = risky_float(g2) + risky_float(s2);
        if (strategy.kind == ReconditionStrategy::Kind::kFixedScale || cost < best_cost) {
          best_g = g2;
          best_s = s2;
          best_cost = cost;
          changed = true;
        }
      }
      if (changed) {
        gamma[c] = best_g;
        sigma[c] = best_s;
        ++r.channels_changed;
      }
    }
  }
  r.risky_after = risky_count(r.graph);
  ojson params = {{"strategy", strategy.kind == ReconditionStrategy::Kind::kFixedScale ? "fixed_scale" : "minimize_risk"},
                  {"channels_changed", r.channels_changed}};
  if (strategy.kind == ReconditionStrategy::Kind::kFixedScale) params["scale"] = strategy.scale;
  r.graph.metadata.transforms.push_back({"recondition_bn", params.dump()});
  return r;
}

namespace {

struct Sink {
  std::size_t layer;
  std::size_t offset;
  bool through_relu;
};

struct Producer {
  std::size_t layer;
  bool is_bn;
};

Producer resolve_producer(const ModelGraph& g, const std::string& name) {
  const std::size_t idx = g.layer_index(name);
  const auto& l = g.layers[idx];
  if (l.kind == LayerKind::kBatchNorm) return {idx, true};
  if (!is_conv_like(l.kind)) {
    fail(ErrorCode::kInvalidArgument, "layer '" + name + "' is neither a convolution nor a batch-norm");
  }
  const auto cons = g.consumers(l.name);
  if (cons.size() == 1 && g.layers[cons[0]].kind == LayerKind::kBatchNorm) return {cons[0], true};
  return {idx, false};
}

void trace_sinks(const ModelGraph& g, const std::vector<std::size_t>& channels, std::size_t node, std::size_t offset,
                 bool relu_seen, std::vector<Sink>& sinks) {
  for (auto c : g.consumers(g.layers[node].name)) {
    const auto& l = g.layers[c];
    switch (l.kind) {
      case LayerKind::kRelu: trace_sinks(g, channels, c, offset, true, sinks); break;
      case LayerKind::kMaxPool: trace_sinks(g, channels, c, offset, relu_seen, sinks); break;
      case LayerKind::kConcat: {
        std::size_t shift = 0;
        if (l.inputs[0] != g.layers[node].name) {
          shift = l.inputs[0] == kGraphInput ? g.input_channels : channels[g.layer_index(l.inputs[0])];
        }
        trace_sinks(g, channels, c, offset + shift, relu_seen, sinks);
        break;
      }
      case LayerKind::kConv2d:
      case LayerKind::kConv2dTranspose:
      case LayerKind::kOutputConv: sinks.push_back({c, offset, relu_seen}); break;
      case LayerKind::kBatchNorm:
        fail(ErrorCode::kUnsupported, "batch-norm '" + l.name + "' between '" + g.layers[node].name +
                                          "' and the next convolution is not scale-equivariant");
    }
  }
}

std::vector<Sink> sinks_of(const ModelGraph& g, const Producer& p) {
  std::vector<Sink> sinks;
  trace_sinks(g, infer_channels(g), p.layer, 0, false, sinks);
  if (sinks.empty()) fail(ErrorCode::kInvalidArgument, "layer '" + g.layers[p.layer].name + "' feeds no convolution");
  return sinks;
}

std::size_t producer_channels(const ModelGraph& g, const Producer& p) { return infer_channels(g)[p.layer]; }

/// Touches every value a channel-i scale affects: fn(value_ref, exponent_shift_sign)
template <typename Fn>
void for_channel(ModelGraph& g, const Producer& p, const std::vector<Sink>& sinks, std::size_t ch, Fn fn) {
  const auto& pl = g.layers[p.layer];
  if (p.is_bn) {
    fn(g.param(pl.name, ParamRole::kBnGamma).tensor.f32()[ch], -1);
    fn(g.param(pl.name, ParamRole::kBnBeta).tensor.f32()[ch], -1);
  } else {
    auto k = g.param(pl.name, kernel_role(pl.kind)).tensor.f32();
    for (std::size_t i = ch; i < k.size(); i += pl.filters) fn(k[i], -1);
    fn(g.param(pl.name, bias_role(pl.kind)).tensor.f32()[ch], -1);
  }
  for (const auto& s : sinks) {
    const auto& sl = g.layers[s.layer];
    auto& kt = g.param(sl.name, kernel_role(sl.kind)).tensor;
    auto k = kt.f32();
    const std::size_t cin = kt.dim(2), cout = kt.dim(3);
    const std::size_t ci = s.offset + ch;
    for (std::size_t tap = 0; tap < kt.dim(0) * kt.dim(1); ++tap) {
      for (std::size_t co = 0; co < cout; ++co) fn(k[(tap * cin + ci) * cout + co], +1);
    }
  }
}

void require_float(const ModelGraph& g, const char* op) {
  if (g.metadata.quantized) fail(ErrorCode::kPrecondition, std::string(op) + " needs a float graph");
}

}  // namespace

ModelGraph cross_layer_equalize(const ModelGraph& graph, const std::string& producer, std::span<const double> scales) {
  require_float(graph, "cross_layer_equalize");
  ModelGraph g = graph;
  const Producer p = resolve_producer(g, producer);
  const auto sinks = sinks_of(g, p);
  const std::size_t channels = producer_channels(g, p);
  if (scales.size() != channels) {
    fail(ErrorCode::kShapeMismatch, std::to_string(scales.size()) + " scales for " + std::to_string(channels) + " channels");
  }
  for (std::size_t c = 0; c < channels; ++c) {
    if (!(scales[c] > 0.0) || !std::isfinite(scales[c])) {
      fail(ErrorCode::kInvalidArgument, "scale for channel " + std::to_string(c) + " must be positive and finite");
    }
  }
  for (std::size_t c = 0; c < channels; ++c) {
    const double s = scales[c];
    if (s == 1.0) continue;
    for_channel(g, p, sinks, c, [s](float& v, int dir) {
      v = static_cast<float>(dir < 0 ? static_cast<double>(v) / s : static_cast<double>(v) * s);
    });
  }
  ojson params = {{"producer", g.layers[p.layer].name}, {"scales", std::vector<double>(scales.begin(), scales.end())}};
  g.metadata.transforms.push_back({"cross_layer_equalize", params.dump()});
  return g;
}

std::vector<double> equalization_scales(const ModelGraph& graph, const std::string& producer) {
  require_float(graph, "equalization_scales");
  ModelGraph g = graph;
  const Producer p = resolve_producer(g, producer);
  const auto sinks = sinks_of(g, p);
  const std::size_t channels = producer_channels(g, p);
  std::vector<double> scales(channels, 1.0);
  const auto& pl = g.layers[p.layer];
  for (std::size_t c = 0; c < channels; ++c) {
    double r1 = 0.0, r2 = 0.0;
    if (p.is_bn) {
      const double gamma = g.param(pl.name, ParamRole::kBnGamma).tensor.f32()[c];
      const double sigma = g.param(pl.name, ParamRole::kBnVariance).tensor.f32()[c];
      r1 = std::fabs(gamma) / std::sqrt(sigma + pl.epsilon);
      for_channel(g, p, sinks, c, [&](float& v, int dir) {
        if (dir > 0) r2 = std::max(r2, static_cast<double>(std::fabs(v)));
      });
    } else {
      for_channel(g, p, sinks, c, [&](float& v, int dir) {
        double& r = dir < 0 ? r1 : r2;
        r = std::max(r, static_cast<double>(std::fabs(v)));
      });
    }
    if (r1 > 0.0 && r2 > 0.0 && std::isfinite(r1) && std::isfinite(r2)) {
      scales[c] = std::ldexp(1.0, static_cast<int>(std::lround(0.5 * std::log2(r1 / r2))));
    }
  }
  return scales;
}

std::vector<double> risk_minimizing_scales(const ModelGraph& graph, const std::string& producer, int min_log2,
                                           int max_log2) {
  require_float(graph, "risk_minimizing_scales");
  if (min_log2 > 0 || max_log2 < 0) fail(ErrorCode::kInvalidArgument, "search range must include 2^0");
  ModelGraph g = graph;
  const Producer p = resolve_producer(g, producer);
  const auto sinks = sinks_of(g, p);
  const std::size_t channels = producer_channels(g, p);
  std::vector<int> order{0};
  for (int j = 1; j <= std::max(max_log2, -min_log2); ++j) {
    if (j <= max_log2) order.push_back(j);
    if (-j >= min_log2) order.push_back(-j);
  }
  std::vector<double> scales(channels, 1.0);
  for (std::size_t c = 0; c < channels; ++c) {
    std::size_t best = std::numeric_limits<std::size_t>::max();
    for (int j : order) {
      const double s = std::ldexp(1.0, j);
      std::size_t cost = 0;
      bool finite = true;
      for_channel(g, p, sinks, c, [&](float& v, int dir) {
        const float t = static_cast<float>(dir < 0 ? static_cast<double>(v) / s : static_cast<double>(v) * s);
        finite = finite && (std::isfinite(t) || !std::isfinite(v));
        cost += risky_float(t);
      });
      if (finite && cost < best) {
        best = cost;
        scales[c] = s;
      }
    }
  }
  return scales;
}

namespace {

std::vector<double> channel_minima(const ModelGraph& g, const Producer& p, std::span<const Tensor> witnesses) {
  const std::size_t channels = producer_channels(g, p);
  std::vector<double> mins(channels, std::numeric_limits<double>::infinity());
  for (const auto& x : witnesses) {
    const GoldenRun run = run_golden(g, x);
    const auto v = run.outputs[p.layer].f32();
    for (std::size_t i = 0; i < v.size(); ++i) mins[i % channels] = std::min(mins[i % channels], static_cast<double>(v[i]));
  }
  return mins;
}

}  // namespace

ModelGraph absorb_bias(const ModelGraph& graph, const std::string& producer, std::span<const double> c,
                       std::span<const Tensor> witnesses) {
  require_float(graph, "absorb_bias");
  ModelGraph g = graph;
  const Producer p = resolve_producer(g, producer);
  const auto sinks = sinks_of(g, p);
  const std::size_t channels = producer_channels(g, p);
  if (c.size() != channels) {
    fail(ErrorCode::kShapeMismatch, std::to_string(c.size()) + " amounts for " + std::to_string(channels) + " channels");
  }
  if (std::all_of(c.begin(), c.end(), [](double v) { return v == 0.0; })) return g;
  for (const auto& s : sinks) {
    const auto& sl = g.layers[s.layer];
    if (sl.kind == LayerKind::kConv2dTranspose) {
      fail(ErrorCode::kUnsupported, "cannot absorb into transposed conv '" + sl.name + "': taps differ per output phase");
    }
    if (sl.kernel > 1 && sl.padding == Padding::kSame) {
      fail(ErrorCode::kUnsupported, "cannot absorb into '" + sl.name + "': zero padding at the border breaks the shift");
    }
  }
  const bool gated = std::any_of(sinks.begin(), sinks.end(), [](const Sink& s) { return s.through_relu; });
  if (gated) {
    if (witnesses.empty()) fail(ErrorCode::kInvalidArgument, "absorb_bias across a ReLU needs witness inputs");
    const auto mins = channel_minima(g, p, witnesses);
    for (std::size_t ch = 0; ch < channels; ++ch) {
      if (c[ch] != 0.0 && mins[ch] < std::max(c[ch], 0.0)) {
        fail(ErrorCode::kPrecondition, "absorption refused: channel " + std::to_string(ch) + " of '" +
                                           g.layers[p.layer].name + "' reaches " + format_number(mins[ch]) +
                                           " on the witnesses, below max(c, 0) = " + format_number(std::max(c[ch], 0.0)));
      }
    }
  }
  const auto& pl = g.layers[p.layer];
  auto shift = p.is_bn ? g.param(pl.name, ParamRole::kBnBeta).tensor.f32() : g.param(pl.name, bias_role(pl.kind)).tensor.f32();
  for (std::size_t ch = 0; ch < channels; ++ch) shift[ch] = static_cast<float>(static_cast<double>(shift[ch]) - c[ch]);
  for (const auto& s : sinks) {
    const auto& sl = g.layers[s.layer];
    const auto& kt = g.param(sl.name, kernel_role(sl.kind)).tensor;
    const auto k = kt.f32();
    auto b = g.param(sl.name, bias_role(sl.kind)).tensor.f32();
    const std::size_t cin = kt.dim(2), cout = kt.dim(3);
    for (std::size_t co = 0; co < cout; ++co) {
      double add = 0.0;
      for (std::size_t tap = 0; tap < kt.dim(0) * kt.dim(1); ++tap) {
        for (std::size_t ch = 0; ch < channels; ++ch) add += static_cast<double>(k[(tap * cin + s.offset + ch) * cout + co]) * c[ch];
      }
      b[co] = static_cast<float>(static_cast<double>(b[co]) + add);
    }
  }
  ojson params = {{"producer", pl.name}, {"c", std::vector<double>(c.begin(), c.end())}, {"witnesses", witnesses.size()}};
  g.metadata.transforms.push_back({"absorb_bias", params.dump()});
  return g;
}

std::vector<double> absorbable_amounts(const ModelGraph& graph, const std::string& producer,
                                       std::span<const Tensor> witnesses) {
  require_float(graph, "absorbable_amounts");
  const Producer p = resolve_producer(graph, producer);
  (void)sinks_of(graph, p);
  auto mins = channel_minima(graph, p, witnesses);
  for (auto& m : mins) m = std::isfinite(m) ? std::max(m, 0.0) : 0.0;
  return mins;
}

}  // namespace seuforge
