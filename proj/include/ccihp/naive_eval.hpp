#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ccihp/dataset.hpp"
#include "ccihp/eval_runner.hpp"
#include "ccihp/taxonomy.hpp"

// Deliberately simple oracle for cross-checking the pipeline: dense
// full-frame scans, per-pair IoU loops, single-threaded, no shortcuts.
// Shares only data types with the pipeline; every count, match, and
// integral is recomputed here from the raw rasters.
namespace ccihp::naive {

struct ApClass {
  std::vector<double> per_threshold;
  double volume = 0.0;
  std::int64_t n_gt = 0;
};

struct ApResult {
  std::map<int, ApClass> per_class;
  std::vector<int> undefined_classes;
  double overall = 0.0;  // NaN when no class has ground truth
};

struct Report {
  std::map<Task, std::vector<double>> iou_per_class;  // [0] background; NaN undefined
  std::map<Task, double> mean_foreground;             // NaN when all undefined
  std::map<Task, double> mean_with_background;
  std::optional<ApResult> ap_r;
  std::optional<ApResult> ap_p;
  std::map<Task, ApResult> ap_cr;
};

Report evaluate(const std::vector<EvalPair>& pairs, const Taxonomy& taxonomy,
                const EvalConfig& config);

}  // namespace ccihp::naive
