#include "seuforge/campaign_io.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "seuforge/error.hpp"

namespace seuforge {

using ojson = nlohmann::ordered_json;

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace {

ojson number_json(double v) {
  if (std::isfinite(v)) return v;
  return format_number(v);
}

double number_from(const ojson& j) {
  if (j.is_number()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s == "nan") return std::nan("");
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  fail(ErrorCode::kFormat, "bad number '" + s + "'");
}

ojson fault_json(const FaultSpec& f) { return ojson::parse(fault_to_json(f)); }

template <typename J>
FaultSpec fault_of(const J& j) {
  return fault_from_json(j.dump());
}

}  // namespace

std::string plan_to_json(const CampaignPlan& plan) {
  ojson j;
  j["mode"] = std::string(to_string(plan.mode));
  j["seed"] = plan.seed;
  j["image_set_id"] = plan.image_set_id;
  j["model_hash"] = plan.model_hash;
  j["sizing"] = {{"e", plan.margin}, {"t", plan.z}, {"p", plan.prior}};
  if (plan.mode == CampaignMode::kSingleBitSweep) {
    ojson targets = ojson::array();
    for (const auto& t : plan.targets) {
      targets.push_back({{"pset", t.pset}, {"bit_lo", t.bit_lo}, {"bit_hi", t.bit_hi}, {"n", t.n}, {"space", t.space}});
    }
    j["targets"] = targets;
    ojson faults = ojson::array();
    for (const auto& f : plan.faults) faults.push_back(fault_json(f));
    j["faults"] = faults;
  } else {
    j["flip_counts"] = plan.flip_counts;
    j["repetitions"] = plan.repetitions;
  }
  return j.dump(2) + "\n";
}

CampaignPlan plan_from_json(std::string_view text) {
  try {
    const auto j = ojson::parse(text);
    CampaignPlan p;
    const auto mode = j.at("mode").get<std::string>();
    if (mode == "single-bit-sweep") {
      p.mode = CampaignMode::kSingleBitSweep;
    } else if (mode == "multi-bit-random") {
      p.mode = CampaignMode::kMultiBitRandom;
    } else {
      fail(ErrorCode::kFormat, "unknown campaign mode '" + mode + "'");
    }
    p.seed = j.at("seed").get<std::uint64_t>();
    p.image_set_id = j.at("image_set_id").get<std::string>();
    p.model_hash = j.at("model_hash").get<std::uint64_t>();
    p.margin = j.at("sizing").at("e").get<double>();
    p.z = j.at("sizing").at("t").get<double>();
    p.prior = j.at("sizing").at("p").get<double>();
    if (p.mode == CampaignMode::kSingleBitSweep) {
      for (const auto& t : j.at("targets")) {
        p.targets.push_back({t.at("pset").get<int>(), t.at("bit_lo").get<int>(), t.at("bit_hi").get<int>(),
                             t.at("n").get<std::uint64_t>(), t.at("space").get<std::uint64_t>()});
      }
      for (const auto& f : j.at("faults")) p.faults.push_back(fault_of(f));
    } else {
      p.flip_counts = j.at("flip_counts").get<std::vector<std::uint64_t>>();
      p.repetitions = j.at("repetitions").get<std::uint64_t>();
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("bad campaign plan: ") + e.what());
  }
}

std::string outcome_to_json(const FaultOutcome& o) {
  ojson j = fault_json(o.spec);
  j["original_bits"] = o.original_bits;
  j["faulty_bits"] = o.faulty_bits;
  j["original_value"] = number_json(o.original_value);
  j["faulty_value"] = number_json(o.faulty_value);
  ojson errs = ojson::array();
  for (double e : o.image_error) errs.push_back(number_json(e));
  j["image_error"] = errs;
  j["mean_error"] = number_json(o.mean_error);
  j["produced_nan"] = o.produced_nan;
  j["produced_inf"] = o.produced_inf;
  j["sign_changed"] = o.sign_changed;
  j["magnitude_increased"] = o.magnitude_increased;
  if (!o.failure.empty()) j["failure"] = o.failure;
  return j.dump();
}

FaultOutcome outcome_from_json(std::string_view line) {
  try {
    const auto j = ojson::parse(line);
    FaultOutcome o;
    o.spec = fault_of(j);
    o.original_bits = j.at("original_bits").get<std::uint32_t>();
    o.faulty_bits = j.at("faulty_bits").get<std::uint32_t>();
    o.original_value = number_from(j.at("original_value"));
    o.faulty_value = number_from(j.at("faulty_value"));
    for (const auto& e : j.at("image_error")) o.image_error.push_back(number_from(e));
    o.mean_error = number_from(j.at("mean_error"));
    o.produced_nan = j.at("produced_nan").get<bool>();
    o.produced_inf = j.at("produced_inf").get<bool>();
    o.sign_changed = j.at("sign_changed").get<bool>();
    o.magnitude_increased = j.at("magnitude_increased").get<bool>();
    o.failure = j.value("failure", std::string{});
    return o;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("bad outcome record: ") + e.what());
  }
}

std::string outcomes_to_jsonl(std::span<const FaultOutcome> outcomes) {
  std::string out;
  for (const auto& o : outcomes) {
    out += outcome_to_json(o);
    out += '\n';
  }
  return out;
}

std::vector<FaultOutcome> outcomes_from_jsonl(std::string_view text) {
  std::vector<FaultOutcome> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(pos, end - pos);
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) out.push_back(outcome_from_json(line));
    pos = end + 1;
  }
  return out;
}

std::string aggregate_csv(std::span<const SweepCell> table) {
  std::ostringstream s;
  s << "pset,bit,n,mean_error,nan_count,inf_count\n";
  for (const auto& c : table) {
    s << c.pset << ',' << c.bit << ',' << c.n << ',' << format_number(c.mean_error) << ',' << c.nan_count << ','
      << c.inf_count << '\n';
  }
  return s.str();
}

std::vector<TidyRow> tidy_rows(const std::string& variant, std::span<const SweepCell> table) {
  std::vector<TidyRow> rows;
  for (const auto& c : table) {
    rows.push_back({variant, c.pset, c.bit, "mean_error", c.mean_error});
    rows.push_back({variant, c.pset, c.bit, "n", static_cast<double>(c.n)});
    rows.push_back({variant, c.pset, c.bit, "nan_count", static_cast<double>(c.nan_count)});
    rows.push_back({variant, c.pset, c.bit, "inf_count", static_cast<double>(c.inf_count)});
  }
  return rows;
}

std::string tidy_csv(std::span<const TidyRow> rows) {
  std::ostringstream s;
  s << "variant,pset,bit,metric,value\n";
  for (const auto& r : rows) {
    s << r.variant << ',' << r.pset << ',' << r.bit << ',' << r.metric << ',' << format_number(r.value) << '\n';
  }
  return s.str();
}

std::string tidy_json(std::span<const TidyRow> rows) {
  ojson a = ojson::array();
  for (const auto& r : rows) {
    a.push_back({{"variant", r.variant}, {"pset", r.pset}, {"bit", r.bit}, {"metric", r.metric}, {"value", number_json(r.value)}});
  }
  return a.dump(2) + "\n";
}

std::string multibit_csv(std::span<const MultiBitPoint> points) {
  std::ostringstream s;
  s << "count,repetitions,mean_error,stddev\n";
  for (const auto& p : points) {
    s << p.count << ',' << p.samples.size() << ',' << format_number(p.mean_error) << ',' << format_number(p.stddev)
      << '\n';
  }
  return s.str();
}

}  // namespace seuforge
