#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seuforge/campaign.hpp"

namespace seuforge {

/// Shortest round-trip decimal; non-finite values render as nan, inf, -inf.
std::string format_number(double v);

std::string plan_to_json(const CampaignPlan& plan);
CampaignPlan plan_from_json(std::string_view text);

/// One JSON object per line. Non-finite decoded values are written as strings.
std::string outcome_to_json(const FaultOutcome& outcome);
FaultOutcome outcome_from_json(std::string_view line);
std::string outcomes_to_jsonl(std::span<const FaultOutcome> outcomes);
/// Blank lines are skipped.
std::vector<FaultOutcome> outcomes_from_jsonl(std::string_view text);

/// Header: pset,bit,n,mean_error,nan_count,inf_count
std::string aggregate_csv(std::span<const SweepCell> table);

struct TidyRow {
  std::string variant;
  int pset = 0;
  int bit = 0;
  std::string metric;
  double value = 0.0;
};

/// Long-form rows (mean_error, n, nan_count, inf_count) per sweep cell.
std::vector<TidyRow> tidy_rows(const std::string& variant, std::span<const SweepCell> table);
/// Header: variant,pset,bit,metric,value
std::string tidy_csv(std::span<const TidyRow> rows);
/// Same rows as a JSON array of objects.
std::string tidy_json(std::span<const TidyRow> rows);

/// Header: count,repetitions,mean_error,stddev
std::string multibit_csv(std::span<const MultiBitPoint> points);

}  // namespace seuforge
