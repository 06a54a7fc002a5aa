#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "rdseg/metrics.hpp"

using namespace rdseg;

namespace {

Mask random_mask(int h, int w, std::mt19937_64& rng, double p) {
  std::bernoulli_distribution dist(p);
  Mask m(h, w);
  for (auto& v : m.v) v = dist(rng) ? 1 : 0;
  return m;
}

// Independent per-pixel oracle, deliberately written without ConfusionCounts.
struct OracleCounts {
  long tp = 0, fp = 0, tn = 0, fn = 0;
};

OracleCounts oracle_counts(const Mask& pred, const Mask& gt) {
  OracleCounts o;
  for (int i = 0; i < pred.h; ++i) {
    for (int j = 0; j < pred.w; ++j) {
      const int p = pred.at(i, j) ? 1 : 0;
      const int g = gt.at(i, j) ? 1 : 0;
      o.tp += p == 1 && g == 1;
      o.fp += p == 1 && g == 0;
      o.fn += p == 0 && g == 1;
      o.tn += p == 0 && g == 0;
    }
  }
  return o;
}

}  // namespace

TEST_CASE("confusion_counts tabulates exactly") {
  Mask pred(1, 4), gt(1, 4);
  pred.v = {1, 1, 0, 0};
  gt.v = {1, 0, 1, 0};
  auto c = confusion_counts(pred, gt);
  CHECK(c.tp == 1);
  CHECK(c.fp == 1);
  CHECK(c.fn == 1);
  CHECK(c.tn == 1);
  CHECK(c.total() == 4);

  Mask p4(4, 4), g4(4, 4);
  for (int j = 0; j < 4; ++j) {
    p4.at(1, j) = 1;
    g4.at(1, j) = 1;
  }
  auto cc = confusion_counts(p4, g4);
  CHECK(cc.tp == 4);
  CHECK(cc.tn == 12);
  CHECK(cc.fp == 0);
  CHECK(cc.fn == 0);

  Mask ones(2, 2), zeros(2, 2);
  ones.v = {1, 1, 1, 1};
  auto oz = confusion_counts(ones, zeros);
  CHECK(oz.fp == 4);
  CHECK(oz.tp + oz.tn + oz.fn == 0);
}

TEST_CASE("confusion_counts rejects shape mismatch") {
  CHECK_THROWS_AS(confusion_counts(Mask(2, 2), Mask(2, 3)), std::invalid_argument);
}

TEST_CASE("the worked example: tp=2 fp=1 fn=1 tn=12") {
  auto m = compute_metrics({2, 1, 12, 1});
  REQUIRE(m.dsc.defined);
  REQUIRE(m.sensitivity.defined);
  REQUIRE(m.specificity.defined);
  CHECK(std::round(m.dsc.value * 1e4) / 1e4 == 0.6667);
  CHECK(std::round(m.sensitivity.value * 1e4) / 1e4 == 0.6667);
  CHECK(std::round(m.specificity.value * 1e4) / 1e4 == 0.9231);
}

TEST_CASE("perfect prediction scores 1 everywhere") {
  auto m = compute_metrics({25, 0, 100, 0});
  CHECK(m.dsc.value == 1.0);
  CHECK(m.sensitivity.value == 1.0);
  CHECK(m.specificity.value == 1.0);
}

TEST_CASE("empty-vs-empty convention") {
  auto m = compute_metrics({0, 0, 64, 0});
  CHECK(m.dsc.defined);
  CHECK(m.dsc.value == 1.0);
  CHECK(!m.sensitivity.defined);
  CHECK(m.specificity.defined);
  CHECK(m.specificity.value == 1.0);
}

TEST_CASE("metrics agree with the brute-force oracle on random masks") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    auto pred = random_mask(32, 32, rng, 0.3);
    auto gt = random_mask(32, 32, rng, 0.3);
    const auto c = confusion_counts(pred, gt);
    const auto o = oracle_counts(pred, gt);
    REQUIRE(c.tp == o.tp);
    REQUIRE(c.fp == o.fp);
    REQUIRE(c.fn == o.fn);
    REQUIRE(c.tn == o.tn);

    const auto m = compute_metrics(c);
    if (2 * o.tp + o.fn + o.fp > 0) {
      CHECK(m.dsc.value == 2.0 * o.tp / double(2 * o.tp + o.fn + o.fp));
    }
    if (o.tp + o.fn > 0) CHECK(m.sensitivity.value == double(o.tp) / double(o.tp + o.fn));
    if (o.tn + o.fp > 0) CHECK(m.specificity.value == double(o.tn) / double(o.tn + o.fp));

    // dsc is symmetric in pred/gt
    const auto swapped = compute_metrics(confusion_counts(gt, pred));
    CHECK(m.dsc.value == swapped.dsc.value);

    for (const MetricValue* v : {&m.dsc, &m.sensitivity, &m.specificity}) {
      if (v->defined) {
        CHECK(v->value >= 0.0);
        CHECK(v->value <= 1.0);
      }
    }
  }
}

TEST_CASE("aggregate: two-point mean and population std") {
  CaseMetrics a, b;
  a.dsc = {0.6, true};
  b.dsc = {0.8, true};
  a.sensitivity = {0.5, true};
  b.sensitivity = {0.5, true};
  auto s = aggregate({a, b});
  CHECK(s.dsc.mean == doctest::Approx(0.7));
  CHECK(s.dsc.stddev == doctest::Approx(0.1));
  CHECK(s.dsc.count == 2);
}

TEST_CASE("aggregate: single case has zero std") {
  CaseMetrics a;
  a.dsc = {0.9, true};
  auto s = aggregate({a});
  CHECK(s.dsc.mean == doctest::Approx(0.9));
  CHECK(s.dsc.stddev == 0.0);
}

TEST_CASE("aggregate excludes undefined entries and counts them") {
  CaseMetrics a, b, c;
  a.sensitivity = {0.4, true};
  b.sensitivity = {0.6, true};
  c.sensitivity = {0.0, false};
  auto s = aggregate({a, b, c});
  CHECK(s.sensitivity.mean == doctest::Approx(0.5));
  CHECK(s.sensitivity.count == 2);
  CHECK(s.sensitivity.undefined == 1);

  CaseMetrics all_undef;
  auto none = aggregate({all_undef});
  CHECK(!none.dsc.available);  // dsc is always defined, so use sensitivity here
  CHECK(!none.sensitivity.available);
}

TEST_CASE("aggregate matches an independent long-double summation") {
  std::mt19937_64 rng(88);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<CaseMetrics> cases(37);
  long double sum = 0.0L;
  for (auto& c : cases) {
    c.dsc = {dist(rng), true};
    sum += c.dsc.value;
  }
  const long double mean = sum / cases.size();
  long double sq = 0.0L;
  for (const auto& c : cases) sq += (c.dsc.value - mean) * (c.dsc.value - mean);
  const long double stddev = std::sqrt(static_cast<double>(sq / cases.size()));

  auto s = aggregate(cases);
  CHECK(std::abs(s.dsc.mean - static_cast<double>(mean)) < 1e-12);
  CHECK(std::abs(s.dsc.stddev - static_cast<double>(stddev)) < 1e-12);
}

TEST_CASE("report formatting") {
  CaseMetrics a;
  a.id = "case0";
  a.counts = {2, 1, 12, 1};
  auto m = compute_metrics(a.counts);
  a.dsc = m.dsc;
  a.sensitivity = m.sensitivity;
  a.specificity = m.specificity;
  auto s = aggregate({a});

  const std::string table = summary_table("infection", s);
  CHECK(table.find("infection") != std::string::npos);
  CHECK(table.find("0.667±0.000") != std::string::npos);

  const std::string json = summary_json("infection", s);
  CHECK(json.find("\"task\": \"infection\"") != std::string::npos);
  CHECK(json.find("\"cases\"") != std::string::npos);
  CHECK(json.find("case0") != std::string::npos);
}

TEST_CASE("aggregate with zero dsc cases is flagged unavailable") {
  auto s = aggregate({});
  CHECK(!s.dsc.available);
  CHECK(format_mean_std(s.dsc) == "n/a");
}
