#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ccihp/dataset.hpp"
#include "ccihp/errors.hpp"
#include "ccihp/instance_metrics.hpp"
#include "ccihp/semantic_metrics.hpp"
#include "ccihp/taxonomy.hpp"

namespace ccihp {

enum class Metric { miou, ap_r, ap_p, ap_cr };
const char* to_string(Metric metric);                  // "miou" / "apr" / "app" / "apcr"
Metric metric_from_string(const std::string& name);    // throws ConfigError

enum class EngineKind { reference, naive };
const char* to_string(EngineKind engine);              // "main" / "naive"
EngineKind engine_from_string(const std::string& name);

struct EvalConfig {
  std::string gt_manifest;
  std::string pred_dir;  // holds <image_id>.json per image
  std::vector<Task> tasks = {Task::attribute, Task::size, Task::pattern, Task::color};
  std::vector<Metric> metrics = {Metric::miou, Metric::ap_r, Metric::ap_p, Metric::ap_cr};
  std::vector<double> thresholds;  // empty -> default_ap_thresholds()
  MeanPolicy mean_policy = MeanPolicy::foreground_only;
  UnitGranularity granularity = UnitGranularity::per_attribute_region;
  ApConfig ap;
  int workers = 1;  // never echoed into reports; results are worker-agnostic
  EngineKind engine = EngineKind::reference;
  bool require_complete = false;  // missing prediction file: error instead of empty
};

struct EvalMetadata {
  std::int64_t images = 0;
  std::vector<std::string> missing_predictions;  // image ids, manifest order
  std::int64_t discarded_empty_prediction_masks = 0;
};

struct EvalReport {
  std::map<Task, ConfusionMatrix> semantic;  // per requested semantic task
  std::optional<ApReport> ap_r;
  std::optional<ApReport> ap_p;
  std::map<Task, ApReport> ap_cr;  // per characteristic task
  EvalMetadata metadata;
};

// In-memory dataset pairing: one prediction slot per ground-truth image
// (nullopt = missing prediction).
struct EvalPair {
  ImageSample gt;
  std::optional<ImagePrediction> pred;
};

// Two-stage pipeline: per-image work (confusions + similarity tables) fans
// out across workers, then a serial merge in image order folds the slots.
// Reports are byte-identical for any worker count.
EvalReport run_evaluation(std::vector<EvalPair> pairs, const Taxonomy& taxonomy,
                          const EvalConfig& config);

// Loads the manifest named by config.gt_manifest, resolves
// <config.pred_dir>/<image_id>.json per image, and runs the pipeline.
// Missing prediction files become empty predictions (recorded in metadata)
// unless config.require_complete.
EvalReport evaluate_files(const EvalConfig& config, const Taxonomy& taxonomy);

// "lo:hi:step" -> {lo, lo+step, ..., hi} (1e-12 endpoint slack); a single
// number stands alone. Throws ConfigError on malformed ranges.
std::vector<double> parse_thresholds(const std::string& text);

}  // namespace ccihp
