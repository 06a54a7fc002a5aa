#include "rdseg/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <utility>

#include <json.hpp>

namespace rdseg {

ConfusionCounts confusion_counts(const Mask& pred, const Mask& gt) {
  if (pred.h != gt.h || pred.w != gt.w) {
    throw std::invalid_argument("confusion_counts: mask extents differ (" +
                                std::to_string(pred.h) + "x" + std::to_string(pred.w) + " vs " +
                                std::to_string(gt.h) + "x" + std::to_string(gt.w) + ")");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.v[i] != 0;
    const bool g = gt.v[i] != 0;
    if (p && g) {
      ++c.tp;
    } else if (p && !g) {
      ++c.fp;
    } else if (!p && g) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

CaseMetrics compute_metrics(const ConfusionCounts& c) {
  CaseMetrics m;
  m.counts = c;
  const std::int64_t dice_denom = 2 * c.tp + c.fn + c.fp;
  if (dice_denom > 0) {
    m.dsc = {2.0 * static_cast<double>(c.tp) / static_cast<double>(dice_denom), true};
  } else {
    m.dsc = {1.0, true};  // both masks empty: perfect agreement by convention
  }
  if (c.tp + c.fn > 0) {
    m.sensitivity = {static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn), true};
  }
  if (c.tn + c.fp > 0) {
    m.specificity = {static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp), true};
  }
  return m;
}

namespace {

AggregateStat aggregate_one(const std::vector<CaseMetrics>& cases,
                            MetricValue CaseMetrics::* member) {
  AggregateStat s;
  double sum = 0.0;
  for (const auto& c : cases) {
    const MetricValue& v = c.*member;
    if (!v.defined) {
      ++s.undefined;
      continue;
    }
    sum += v.value;
    ++s.count;
  }
  if (s.count == 0) return s;
  s.available = true;
  s.mean = sum / s.count;
  double sq = 0.0;
  for (const auto& c : cases) {
    const MetricValue& v = c.*member;
    if (v.defined) sq += (v.value - s.mean) * (v.value - s.mean);
  }
  s.stddev = std::sqrt(sq / s.count);
  return s;
}

}  // namespace

MetricsSummary aggregate(std::vector<CaseMetrics> cases) {
  MetricsSummary s;
  s.cases = std::move(cases);
  s.dsc = aggregate_one(s.cases, &CaseMetrics::dsc);
  s.sensitivity = aggregate_one(s.cases, &CaseMetrics::sensitivity);
  s.specificity = aggregate_one(s.cases, &CaseMetrics::specificity);
  return s;
}

std::string format_mean_std(const AggregateStat& s) {
  if (!s.available) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f±%.3f", s.mean, s.stddev);
  return buf;
}

namespace {

nlohmann::ordered_json stat_json(const AggregateStat& s) {
  nlohmann::ordered_json j;
  j["available"] = s.available;
  if (s.available) {
    j["mean"] = s.mean;
    j["std"] = s.stddev;
  }
  j["cases"] = s.count;
  j["undefined"] = s.undefined;
  return j;
}

nlohmann::ordered_json value_json(const MetricValue& v) {
  if (!v.defined) return nullptr;
  return v.value;
}

}  // namespace

std::string summary_json(const std::string& task, const MetricsSummary& s) {
  nlohmann::ordered_json doc;
  doc["task"] = task;
  doc["aggregate"]["dsc"] = stat_json(s.dsc);
  doc["aggregate"]["sensitivity"] = stat_json(s.sensitivity);
  doc["aggregate"]["specificity"] = stat_json(s.specificity);
  doc["cases"] = nlohmann::ordered_json::array();
  for (const auto& c : s.cases) {
    nlohmann::ordered_json item;
    item["id"] = c.id;
    item["tp"] = c.counts.tp;
    item["fp"] = c.counts.fp;
    item["tn"] = c.counts.tn;
    item["fn"] = c.counts.fn;
    item["dsc"] = value_json(c.dsc);
    item["sensitivity"] = value_json(c.sensitivity);
    item["specificity"] = value_json(c.specificity);
    doc["cases"].push_back(std::move(item));
  }
  return doc.dump(2);
}

std::string summary_table(const std::string& task, const MetricsSummary& s) {
  std::string out = "Task\tDSC\tSensitivity\tSpecificity\n";
  out += task + "\t" + format_mean_std(s.dsc) + "\t" + format_mean_std(s.sensitivity) + "\t" +
         format_mean_std(s.specificity) + "\n";
  return out;
}

}  // namespace rdseg
