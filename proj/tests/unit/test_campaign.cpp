#include <cmath>
#include <functional>

#include "../common/toy.hpp"
#include "doctest.h"
#include "seuforge/campaign.hpp"
#include "seuforge/campaign_io.hpp"
#include "seuforge/error.hpp"

using namespace seuforge;
using seuforge::testing::tiny_model;

namespace {

ClassMap row(std::vector<std::int32_t> labels) {
  const std::size_t w = labels.size();
  return ClassMap{1, 1, w, std::move(labels)};
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kIo;
}

std::vector<Tensor> tiny_images(std::size_t count, std::uint64_t seed) {
  return generate_calibration_set(6, 6, 2, count, seed, 3).inputs;
}

}  // namespace

TEST_SUITE("campaign") {
  TEST_CASE("sample size") {
    CHECK(sample_size(996480000ull, 0.025, 1.96, 0.5) == 1537);
    CHECK(sample_size(1, 0.025, 1.96, 0.5) == 1);
    CHECK(sample_size(1000, 1e-9, 1.96, 0.5) == 1000);
    // Independent evaluation of the closed form.
    for (std::uint64_t N : {10ull, 500ull, 123457ull}) {
      const double e = 0.05, t = 1.96, p = 0.3;
      const double n = static_cast<double>(N) / (1.0 + e * e * (static_cast<double>(N) - 1.0) / (t * t * p * (1.0 - p)));
      CHECK(sample_size(N, e, t, p) == static_cast<std::uint64_t>(std::ceil(n)));
    }
    CHECK_THROWS_AS(sample_size(0, 0.025, 1.96, 0.5), Error);
    CHECK_THROWS_AS(sample_size(10, 0.0, 1.96, 0.5), Error);
    CHECK_THROWS_AS(sample_size(10, 0.025, 1.96, 1.0), Error);
    CHECK_THROWS_AS(sample_size(10, 0.025, -1.0, 0.5), Error);
  }

  TEST_CASE("error rate") {
    const auto a = row({0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2});
    CHECK(error_rate(a, a) == 0.0);
    CHECK(error_rate(row({0, 1, 0, 1}), row({1, 0, 1, 0})) == 100.0);
    auto b = a;
    b.labels[0] = 2;
    b.labels[4] = 0;
    b.labels[11] = kInvalidClass;
    CHECK(error_rate(a, b) == doctest::Approx(25.0));
    auto invalid = row({kInvalidClass});
    CHECK(error_rate(invalid, invalid) == 100.0);
    CHECK_THROWS_AS(error_rate(a, row({0})), Error);
  }

  TEST_CASE("hand-built confusion case") {
    // labels 0 0 1 1, prediction 0 1 1 1
    const auto m = segmentation_metrics(row({0, 1, 1, 1}), row({0, 0, 1, 1}), 2);
    CHECK(m.per_class[0].recall == doctest::Approx(50.0));
    CHECK(m.per_class[0].precision == doctest::Approx(100.0));
    CHECK(m.per_class[0].iou == doctest::Approx(50.0));
    CHECK(m.per_class[1].recall == doctest::Approx(100.0));
    CHECK(m.per_class[1].precision == doctest::Approx(200.0 / 3.0));
    CHECK(m.per_class[1].iou == doctest::Approx(200.0 / 3.0));
    CHECK(m.global.iou == doctest::Approx(60.0));
    CHECK(m.weighted.iou == doctest::Approx(0.5 * 50.0 + 0.5 * 200.0 / 3.0));
    CHECK(m.error_rate == doctest::Approx(25.0));
  }

  TEST_CASE("perfect and complement predictions") {
    const auto truth = row({0, 1, 1, 0, 1});
    const auto p = segmentation_metrics(truth, truth, 2);
    CHECK(p.global.iou == 100.0);
    CHECK(p.weighted.iou == 100.0);
    for (const auto& c : p.per_class) CHECK(c.iou == 100.0);
    const auto c = segmentation_metrics(row({1, 0, 0, 1, 0}), truth, 2);
    CHECK(c.per_class[0].iou == 0.0);
    CHECK(c.per_class[1].iou == 0.0);
    CHECK_THROWS_AS(segmentation_metrics(row({2}), row({0}), 2), Error);
  }

  TEST_CASE("invalid predictions are false negatives only") {
    ConfusionMatrix cm(2);
    cm.add(row({kInvalidClass, 1}), row({0, 1}));
    const auto m = cm.metrics();
    CHECK(m.per_class[0].recall == 0.0);
    CHECK(m.per_class[0].precision == 100.0);  // no positive predictions at all
    CHECK(m.per_class[1].precision == 100.0);
    CHECK(cm.counts()[0 * 3 + 2] == 1);

    ConfusionMatrix a(2), b(2), all(2);
    a.add(row({0, 1}), row({0, 0}));
    b.add(row({1, 1}), row({1, 0}));
    all.add(row({0, 1, 1, 1}), row({0, 0, 1, 0}));
    a.merge(b);
    CHECK(a.counts() == all.counts());
  }

  TEST_CASE("class shares") {
    const std::vector<ClassMap> maps = {row({0, 0, 1, kInvalidClass})};
    const auto s = class_shares(maps, 3);
    CHECK(s[0] == doctest::Approx(50.0));
    CHECK(s[1] == doctest::Approx(25.0));
    CHECK(s[2] == 0.0);
  }

  TEST_CASE("weighted bit error") {
    const std::vector<double> two = {10.0, 30.0};
    CHECK(weighted_bit_error(two, 24, 25) == doctest::Approx(70.0 / 3.0));
    const std::vector<double> one = {42.0};
    CHECK(weighted_bit_error(one, 30, 30) == doctest::Approx(42.0));
    const std::vector<double> flat(8, 7.5);
    CHECK(weighted_bit_error(flat, 23, 30) == doctest::Approx(7.5));
    CHECK_THROWS_AS(weighted_bit_error(two, 24, 26), Error);
  }

  TEST_CASE("bit-30 predictors") {
    const std::vector<double> shares = {0, 55.09, 4.41, 73.05, 7.47, 83.73};
    CHECK(predict_bit30_error_from_terms(shares) == doctest::Approx(37.2917).epsilon(1e-4));
    const std::vector<double> q = {0, 54.91, 4.28, 72.42, 6.91, 83.86};
    CHECK(predict_sign_bit_error_from_terms(q).estimate == doctest::Approx(62.94).epsilon(1e-4));
    CHECK(predict_sign_bit_error_from_terms(q).high_variance);

    // Negative bias: the class vanishes; positive: it takes every pixel.
    const std::vector<double> signs = {-0.3, 0.2};
    const std::vector<double> s2 = {30.0, 70.0};
    const auto terms = bit30_terms(signs, s2);
    CHECK(terms[0] == doctest::Approx(30.0));
    CHECK(terms[1] == doctest::Approx(30.0));
    CHECK(predict_bit30_error(signs, s2) == doctest::Approx(30.0));
    CHECK(predict_sign_bit_error_quantized(signs, s2).estimate == doctest::Approx(70.0));
    // A single positive class owning every pixel is erased by its sign flip.
    const std::vector<double> pos = {1.0}, full = {100.0};
    CHECK(predict_sign_bit_error_quantized(pos, full).estimate == doctest::Approx(100.0));
    CHECK_THROWS_AS(predict_bit30_error(signs, full), Error);
  }

  TEST_CASE("sweep planning") {
    const auto g = tiny_model();
    SweepOptions o;
    o.filter = ParamFilter{{ParamRole::kConvBias}, {}, false};
    o.bit_lo = 28;
    o.bit_hi = 31;
    o.seed = 4;
    const auto plan = plan_single_bit_sweep(g, o);
    REQUIRE(plan.targets.size() == 2);
    CHECK(plan.targets[0].space == 16);
    CHECK(plan.targets[0].n == sample_size(16, 0.025, 1.96, 0.5));
    for (std::size_t i = 0; i < plan.faults.size(); ++i) {
      CHECK(plan.faults[i].seed_ordinal == i);
      CHECK((plan.faults[i].bit >= 28 && plan.faults[i].bit <= 31));
    }
    CHECK(plan_to_json(plan) == plan_to_json(plan_single_bit_sweep(g, o)));
    CHECK(plan_to_json(plan_from_json(plan_to_json(plan))) == plan_to_json(plan));

    o.exhaustive = true;
    CHECK(plan_single_bit_sweep(g, o).faults.size() == 4 * 4 + 3 * 4);
    o.exhaustive = false;
    o.n = 3;
    const auto small = plan_single_bit_sweep(g, o);
    CHECK(small.faults.size() == 6);
    o.bit_hi = 32;
    CHECK(code_of([&] { plan_single_bit_sweep(g, o); }) == ErrorCode::kInvalidArgument);
  }

  TEST_CASE("zero weights are immune to low bits") {
    auto g = tiny_model();
    for (auto& v : g.pset(1).tensor.f32()) v = 0.0f;
    SweepOptions o;
    o.filter = ParamFilter{{}, {1}, false};
    o.bit_lo = 0;
    o.bit_hi = 22;
    o.exhaustive = true;
    const auto res = run_single_bit_sweep(g, plan_single_bit_sweep(g, o), tiny_images(2, 9));
    CHECK(res.table.size() == 23);
    for (const auto& cell : res.table) CHECK(cell.mean_error == 0.0);
  }

  TEST_CASE("sweeps are reproducible across workers") {
    const auto g = tiny_model();
    SweepOptions o;
    o.n = 20;
    o.seed = 11;
    const auto plan = plan_single_bit_sweep(g, o);
    const auto images = tiny_images(2, 3);
    const auto a = run_single_bit_sweep(g, plan, images, 1);
    const auto b = run_single_bit_sweep(g, plan, images, 3);
    CHECK(outcomes_to_jsonl(a.outcomes) == outcomes_to_jsonl(b.outcomes));
    CHECK(aggregate_csv(a.table) == aggregate_csv(b.table));
    const auto back = outcomes_from_jsonl(outcomes_to_jsonl(a.outcomes));
    CHECK(outcomes_to_jsonl(back) == outcomes_to_jsonl(a.outcomes));
    CHECK(aggregate_csv(aggregate_outcomes(back)) == aggregate_csv(a.table));
    CHECK(aggregate_csv({}) == "pset,bit,n,mean_error,nan_count,inf_count\n");
  }

  TEST_CASE("gamma bit 30 poisons every pixel") {
    ToyWeightConfig cfg;
    cfg.gamma_min = 1.0;
    cfg.gamma_max = 2.0;
    const auto g = seuforge::testing::toy_model(6, cfg);
    const auto images = generate_calibration_set(16, 16, 4, 1, 2, 4).inputs;
    const int pset = g.param("bn", ParamRole::kBnGamma).index;
    const FaultSpec f{pset, 3, 30, Encoding::kF32, 0};
    const auto out = run_fault_list(g, std::span(&f, 1), images);
    REQUIRE(out.size() == 1);
    CHECK(out[0].produced_nan);
    CHECK(out[0].mean_error == 100.0);
  }

  TEST_CASE("multi-bit campaign") {
    const auto g = tiny_model();
    const auto images = tiny_images(1, 4);
    MultiBitOptions o;
    o.counts = {0, 1, 5};
    o.repetitions = 6;
    o.seed = 8;
    const auto a = run_multi_bit_campaign(g, o, images, 1);
    const auto b = run_multi_bit_campaign(g, o, images, 2);
    REQUIRE(a.size() == 3);
    CHECK(a[0].mean_error == 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].samples == b[i].samples);
    CHECK(multibit_csv(a).rfind("count,repetitions,mean_error,stddev\n", 0) == 0);
    o.counts = {fault_space_size(g, ParamFilter::all()) + 1};
    CHECK_THROWS_AS(run_multi_bit_campaign(g, o, images), Error);
  }

  TEST_CASE("tidy output") {
    const std::vector<SweepCell> table = {{3, 30, 5, 12.5, 1, 0}};
    const auto rows = tidy_rows("base", table);
    CHECK(rows.size() == 4);
    const auto csv = tidy_csv(rows);
    CHECK(csv.rfind("variant,pset,bit,metric,value\n", 0) == 0);
    CHECK(csv.find("base,3,30,mean_error,12.5") != std::string::npos);
    CHECK(tidy_json(rows).find("\"metric\"") != std::string::npos);
    CHECK(format_number(0.1) == "0.1");
    CHECK(format_number(std::numeric_limits<double>::infinity()) == "inf");
  }
}
