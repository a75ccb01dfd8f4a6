#include "seuforge/analysis.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "seuforge/campaign_io.hpp"
#include "seuforge/error.hpp"
#include "seuforge/quant.hpp"

namespace seuforge {

using ojson = nlohmann::ordered_json;

std::vector<PositiveRatioRow> positive_ratio_table(const ModelGraph& graph, std::vector<ParamRole> roles) {
  std::vector<PositiveRatioRow> rows;
  for (const auto& p : graph.params) {
    if (std::find(roles.begin(), roles.end(), p.role) == roles.end()) continue;
    PositiveRatioRow r{p.index, p.layer, p.role, 0, p.tensor.size(), 0.0};
    for (std::size_t i = 0; i < p.tensor.size(); ++i) r.positive += p.tensor.value(i) > 0.0;
    r.percent = r.total == 0 ? 0.0 : 100.0 * static_cast<double>(r.positive) / static_cast<double>(r.total);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string positive_ratio_csv(std::span<const PositiveRatioRow> rows) {
  std::ostringstream s;
  s << "Name,Pos.,Total,%\n";
  for (const auto& r : rows) s << r.layer << ',' << r.positive << ',' << r.total << ',' << format_number(r.percent) << '\n';
  return s.str();
}

std::string positive_ratio_json(std::span<const PositiveRatioRow> rows) {
  ojson a = ojson::array();
  for (const auto& r : rows) {
    a.push_back({{"pset", r.pset},
                 {"Name", r.layer},
                 {"role", std::string(to_string(r.role))},
                 {"Pos.", r.positive},
                 {"Total", r.total},
                 {"%", r.percent}});
  }
  return a.dump(2) + "\n";
}

std::string_view to_string(ExponentRisk risk) {
  switch (risk) {
    case ExponentRisk::kNone: return "none";
    case ExponentRisk::kFullMinusOne: return "full_minus_one";
    case ExponentRisk::kPartialMinusOne: return "partial_minus_one";
    case ExponentRisk::kExponent128: return "exponent_128";
  }
  return "?";
}

std::uint32_t exponent_field(std::uint32_t pattern) { return (pattern >> 23) & 0xFFu; }

ExponentRisk classify_exponent(std::uint32_t pattern) {
  const std::uint32_t e = exponent_field(pattern);
  if (e == 0x7Fu) return ExponentRisk::kFullMinusOne;
  if (e == 0x80u) return ExponentRisk::kExponent128;
  if ((e & 0x80u) == 0 && std::popcount(e & 0x7Fu) == 6) return ExponentRisk::kPartialMinusOne;
  return ExponentRisk::kNone;
}

std::vector<RiskyScanRow> risky_exponent_scan(const ModelGraph& graph) {
  std::vector<RiskyScanRow> rows;
  for (const auto& p : graph.params) {
    if (p.tensor.encoding() != Encoding::kF32) continue;
    RiskyScanRow r;
    r.pset = p.index;
    r.layer = p.layer;
    r.role = p.role;
    r.total = p.tensor.size();
    for (std::size_t i = 0; i < p.tensor.size(); ++i) {
      const std::uint32_t bits = p.tensor.bits(i);
      switch (classify_exponent(bits)) {
        case ExponentRisk::kFullMinusOne:
          ++r.full_minus_one;
          r.full_elements.push_back(i);
          break;
        case ExponentRisk::kPartialMinusOne:
          ++r.partial_minus_one;
          r.partial_elements.push_back(i);
          if (exponent_field(bits) == 0x7Eu) ++r.non_protectable;
          break;
        case ExponentRisk::kExponent128:
          ++r.exponent_128;
          r.exponent_128_elements.push_back(i);
          break;
        case ExponentRisk::kNone: break;
      }
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::uint64_t risky_count(const ModelGraph& graph) {
  std::uint64_t n = 0;
  for (const auto& r : risky_exponent_scan(graph)) n += r.risky();
  return n;
}

std::string risky_scan_csv(std::span<const RiskyScanRow> rows) {
  std::ostringstream s;
  s << "pset,Name,role,total,full_minus_one,partial_minus_one,non_protectable,exponent_128\n";
  for (const auto& r : rows) {
    s << r.pset << ',' << r.layer << ',' << to_string(r.role) << ',' << r.total << ',' << r.full_minus_one << ','
      << r.partial_minus_one << ',' << r.non_protectable << ',' << r.exponent_128 << '\n';
  }
  return s.str();
}

int twos_complement_width(std::int64_t x) {
  int k = 1;
  while (k < 64) {
    const std::int64_t lo = -(std::int64_t{1} << (k - 1));
    const std::int64_t hi = (std::int64_t{1} << (k - 1)) - 1;
    if (x >= lo && x <= hi) return k;
    ++k;
  }
  return 64;
}

std::vector<BitsNeededRow> bits_needed_table(const ModelGraph& graph) {
  if (!graph.metadata.quantized) fail(ErrorCode::kPrecondition, "bits_needed_table needs a quantized graph");
  std::vector<BitsNeededRow> rows;
  for (const auto& p : graph.params) {
    BitsNeededRow r;
    r.pset = p.index;
    r.layer = p.layer;
    r.role = p.role;
    r.encoding = p.tensor.encoding();
    for (std::size_t i = 0; i < p.tensor.size(); ++i) {
      const auto v = static_cast<std::int64_t>(p.tensor.value(i));
      if (v > 0 && (!r.max_positive || v > *r.max_positive)) r.max_positive = v;
      if (v < 0 && (!r.min_negative || v < *r.min_negative)) r.min_negative = v;
    }
    if (r.max_positive) r.positive_bits = twos_complement_width(*r.max_positive);
    if (r.min_negative) r.negative_bits = twos_complement_width(*r.min_negative);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string bits_needed_csv(std::span<const BitsNeededRow> rows) {
  std::ostringstream s;
  s << "Name,Role,Pos. bits,Neg. bits\n";
  for (const auto& r : rows) {
    s << r.layer << ',' << to_string(r.role) << ',';
    if (r.positive_bits) s << *r.positive_bits;
    s << ',';
    if (r.negative_bits) s << *r.negative_bits;
    s << '\n';
  }
  return s.str();
}

CalibrationReport calibration_report(const ModelGraph& graph, std::span<const Tensor> inputs) {
  CalibrationReport rep;
  rep.parameters = capture_parameter_stats(graph);
  rep.inputs = inputs.size();
  for (const auto& x : inputs) {
    if (!graph.metadata.quantized) {
      rep.activations.merge(*run_float(graph, x, true).trace);
      continue;
    }
    const GoldenRun run = run_golden(graph, x);
    ActivationTrace t;
    for (std::size_t i = 0; i < x.size(); ++i) t.input.add(x.f32()[i]);
    for (std::size_t i = 0; i < graph.layers.size(); ++i) {
      const auto& l = graph.layers[i];
      const Tensor real = dequantize_tensor(run.outputs[i], activation_qparams(graph, l.name));
      ValueStats s;
      for (float v : real.f32()) s.add(v);
      t.layers.push_back({l.name, l.kind, s});
    }
    rep.activations.merge(t);
  }
  return rep;
}

namespace {

ojson stats_json(const ValueStats& s) {
  ojson j = {{"count", s.count},         {"finite", s.finite_count}, {"nan", s.nan_count},
             {"inf", s.inf_count},       {"positive", s.positive_count}};
  if (s.has_finite()) {
    j["min"] = s.min;
    j["max"] = s.max;
  } else {
    j["min"] = nullptr;
    j["max"] = nullptr;
  }
  j["histogram"] = {{"min_exponent", kHistogramMinExponent},
                    {"zeros", s.histogram.zeros},
                    {"positive", s.histogram.positive},
                    {"negative", s.histogram.negative}};
  return j;
}

}  // namespace

std::string calibration_report_json(const ModelGraph& graph, const CalibrationReport& report) {
  ojson params = ojson::array();
  for (const auto& p : report.parameters) {
    params.push_back({{"pset", p.pset},
                      {"layer", p.layer},
                      {"role", std::string(to_string(p.role))},
                      {"encoding", std::string(to_string(p.encoding))},
                      {"stats", stats_json(p.stats)}});
  }
  ojson layers = ojson::array();
  for (const auto& l : report.activations.layers) {
    layers.push_back({{"layer", l.name}, {"kind", std::string(to_string(l.kind))}, {"stats", stats_json(l.stats)}});
  }
  ojson j = {{"model_hash", model_hash(graph)},
             {"inputs", report.inputs},
             {"parameters", params},
             {"input_activation", stats_json(report.activations.input)},
             {"activations", layers}};
  return j.dump(2) + "\n";
}

double correlate(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorCode::kInvalidArgument, "correlate needs series of equal length");
  if (a.size() < 2) fail(ErrorCode::kInvalidArgument, "correlate needs at least two points");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) fail(ErrorCode::kInvalidArgument, "correlate is undefined for a constant series");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

}  // namespace seuforge
