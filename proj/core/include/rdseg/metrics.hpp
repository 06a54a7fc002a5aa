#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rdseg/grid.hpp"

namespace rdseg {

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;
  std::int64_t fn = 0;

  [[nodiscard]] std::int64_t total() const { return tp + fp + tn + fn; }
};

ConfusionCounts confusion_counts(const Mask& pred, const Mask& gt);

struct MetricValue {
  double value = 0.0;
  bool defined = false;
};

struct CaseMetrics {
  std::string id;
  ConfusionCounts counts;
  MetricValue dsc;          // 2tp / (2tp + fn + fp); 1 when both masks are empty
  MetricValue sensitivity;  // tp / (tp + fn)
  MetricValue specificity;  // tn / (tn + fp)
};

CaseMetrics compute_metrics(const ConfusionCounts& c);

struct AggregateStat {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation over defined values
  int count = 0;
  int undefined = 0;
  bool available = false;
};

struct MetricsSummary {
  std::vector<CaseMetrics> cases;
  AggregateStat dsc;
  AggregateStat sensitivity;
  AggregateStat specificity;
};

MetricsSummary aggregate(std::vector<CaseMetrics> cases);

/// "0.961±0.018" or "n/a" when no case defined the measure.
std::string format_mean_std(const AggregateStat& s);

std::string summary_json(const std::string& task, const MetricsSummary& s);
std::string summary_table(const std::string& task, const MetricsSummary& s);

}  // namespace rdseg
