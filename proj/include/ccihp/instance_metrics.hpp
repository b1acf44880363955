#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ccihp/errors.hpp"
#include "ccihp/maskcore.hpp"
#include "ccihp/taxonomy.hpp"

namespace ccihp {

// How characterized units are cut: one unit per (instance, attribute,
// characteristic class), or pooled over attributes per (instance,
// characteristic class).
enum class UnitGranularity { per_attribute_region, per_instance };
const char* to_string(UnitGranularity granularity);
UnitGranularity unit_granularity_from_string(const std::string& name);  // throws ConfigError

enum class ApMetric { ap_r, ap_p, ap_cr };
const char* to_string(ApMetric metric);   // "ap_r_vol" / "ap_p_vol" / "ap_cr_vol"
const char* table_label(ApMetric metric); // "AP^r_vol" / "AP^p_vol" / "AP^cr_vol"

// One matchable region. class_id is the attribute class for region units and
// the characteristic class for characterized units; attribute_id records the
// source attribute of a characterized unit (0 when pooled per instance).
// Ground-truth units have no score; prediction units inherit their instance
// detection score. ingest_order is the load-time sequence used to break
// score ties.
struct EvalUnit {
  std::string image_id;
  int instance_id = 0;
  int class_id = 0;
  int attribute_id = 0;
  BinaryMask mask;
  std::optional<double> score;
  std::int64_t ingest_order = 0;
};

// Outcome of matching one class at one threshold. Entries are in ranked
// order (score descending, ingest ascending); gt_index refers into the gts
// span handed to greedy_match, -1 for an unmatched prediction.
struct MatchResult {
  double threshold = 0.0;
  std::int64_t n_gt = 0;
  struct Entry {
    std::size_t pred_index = 0;
    bool tp = false;
    std::ptrdiff_t gt_index = -1;
  };
  std::vector<Entry> ranked;
};

// Matching/integration policy echoed into every report.
struct ApConfig {
  std::string tie_break = "score_desc,ingest_asc,gt_first";
  std::string integration = "all_point_interpolation";
  bool discard_empty_pred_units = true;
};

struct ApClassResult {
  std::vector<double> per_threshold;
  double volume = 0.0;  // arithmetic mean over thresholds
  std::int64_t n_gt = 0;
};

struct ApReport {
  ApMetric metric = ApMetric::ap_r;
  Task task = Task::attribute;  // attribute for ap_r, the characteristic task
                                // for ap_cr, instance for ap_p
  std::vector<double> thresholds;
  std::map<int, ApClassResult> per_class;  // defined classes only
  std::vector<int> undefined_classes;      // zero ground-truth units
  double overall = 0.0;                    // NaN when every class is undefined
  ApConfig config;
};

// {0.10, 0.20, ..., 0.90}
std::vector<double> default_ap_thresholds();

// ---- unit extraction ------------------------------------------------------

// One unit per (instance, attribute class) with at least one pixel. scores
// are per instance id (scores[i-1] for instance i); pass an empty span for
// ground truth.
std::vector<EvalUnit> extract_region_units(const LabelMap& instance_map,
                                           const LabelMap& attribute_map,
                                           const std::string& image_id,
                                           std::span<const double> scores = {});

// Characterized units for one characteristic task. Only characterizable
// attribute regions contribute; the unit's class_id is the characteristic
// class. Throws NotACharacteristicTask unless task is size/pattern/color.
std::vector<EvalUnit> extract_characterized_units(
    const LabelMap& instance_map, const LabelMap& attribute_map,
    const LabelMap& characteristic_map, const Taxonomy& taxonomy, Task task,
    const std::string& image_id, std::span<const double> scores = {},
    UnitGranularity granularity = UnitGranularity::per_attribute_region);

// ---- matching and integration ---------------------------------------------

// Score-ranked greedy matching of one class. Predictions are visited in
// (score desc, ingest asc) order; each takes the highest-IoU unconsumed
// ground-truth unit of its own image and is a TP iff that IoU reaches the
// threshold (consuming the unit). Throws MixedClasses when units of more
// than one class are mixed in, SchemaError when a prediction lacks a score.
MatchResult greedy_match(std::span<const EvalUnit> preds, std::span<const EvalUnit> gts,
                         double threshold);

// All-point interpolated average precision (precision envelope over the
// ranked list, recall denominator n_gt). Throws NoGroundTruth when n_gt == 0.
double average_precision(const MatchResult& result);

// Mean IoU of the attribute parts of two persons, taken over the classes
// present in either person (a part present on one side only scores 0).
// Throws BothEmpty when neither person has any foreground part,
// DimensionMismatch when rasters disagree.
double person_match_score(const BinaryMask& pred_mask, const LabelMap& pred_attribute,
                          const BinaryMask& gt_mask, const LabelMap& gt_attribute);

// ---- evaluation pipeline types --------------------------------------------
// Run-based unit representation used by the evaluation pipeline so matching
// cost does not scale with raster area. The EvalUnit overloads above are
// thin views of the same extraction.

struct UnitShape {
  int class_id = 0;
  int attribute_id = 0;
  int instance_id = 0;
  RleMask rle;
  std::int64_t area = 0;
  Box bbox;
  std::optional<double> score;
  std::int64_t ingest = 0;
};

struct PersonPart {
  int class_id = 0;
  RleMask rle;
  std::int64_t area = 0;
  Box bbox;
};

struct PersonUnit {
  std::string image_id;
  int instance_id = 0;
  RleMask rle;
  std::int64_t area = 0;
  Box bbox;
  std::vector<PersonPart> parts;  // ascending class_id
  std::optional<double> score;
  std::int64_t ingest = 0;
};

std::vector<UnitShape> region_shapes(const LabelMap& instance_map, const LabelMap& attribute_map,
                                     std::span<const double> scores = {});
std::vector<UnitShape> region_shapes(std::span<const RleMask> instance_masks,
                                     std::span<const double> scores,
                                     const LabelMap& attribute_map);
std::vector<UnitShape> characterized_shapes(const LabelMap& instance_map,
                                            const LabelMap& attribute_map,
                                            const LabelMap& characteristic_map,
                                            const Taxonomy& taxonomy, Task task,
                                            std::span<const double> scores = {},
                                            UnitGranularity granularity =
                                                UnitGranularity::per_attribute_region);
std::vector<UnitShape> characterized_shapes(std::span<const RleMask> instance_masks,
                                            std::span<const double> scores,
                                            const LabelMap& attribute_map,
                                            const LabelMap& characteristic_map,
                                            const Taxonomy& taxonomy, Task task,
                                            UnitGranularity granularity =
                                                UnitGranularity::per_attribute_region);

std::vector<PersonUnit> person_units(const LabelMap& instance_map,
                                     const LabelMap& attribute_map,
                                     const std::string& image_id,
                                     std::span<const double> scores = {});
// Empty instance masks yield no person unit (the caller counts discards).
std::vector<PersonUnit> person_units(std::span<const RleMask> instance_masks,
                                     std::span<const double> scores,
                                     const LabelMap& attribute_map,
                                     const std::string& image_id);

// person_match_score on pipeline units; a pairing where neither person has
// parts scores 0 here (it can never reach a threshold in (0,1)).
double person_score(const PersonUnit& pred, const PersonUnit& gt);

// Fused extraction: walks each raster (or each instance mask) once and feeds
// every requested unit family from that single pass. Produces exactly the
// vectors the per-family functions above produce -- same keys, same ingest
// order -- but avoids re-reading label rows per family, which dominates the
// cost on crowded images.
struct UnitFamilies {
  bool region = false;
  bool characterized = false;
  bool persons = false;
};

struct UnitBundle {
  std::vector<UnitShape> region;
  std::array<std::vector<UnitShape>, 3> characterized;  // indexed like kCharacteristicTasks
  std::vector<PersonUnit> persons;
};

// characteristic_maps follows kCharacteristicTasks order; entries may be null
// unless families.characterized is set.
UnitBundle extract_unit_bundle(const LabelMap& instance_map, const LabelMap& attribute_map,
                               const std::array<const LabelMap*, 3>& characteristic_maps,
                               const Taxonomy& taxonomy, UnitGranularity granularity,
                               const UnitFamilies& families, const std::string& image_id,
                               std::span<const double> scores = {});
UnitBundle extract_unit_bundle(std::span<const RleMask> instance_masks,
                               std::span<const double> scores, const LabelMap& attribute_map,
                               const std::array<const LabelMap*, 3>& characteristic_maps,
                               const Taxonomy& taxonomy, UnitGranularity granularity,
                               const UnitFamilies& families, const std::string& image_id);

// Per-image similarity table: every prediction carries its nonzero IoUs (or
// person scores) against the image's same-class ground-truth units, stored
// sparsely over one shared arena, so the pooled AP pass never touches pixels
// again. Zeros are omitted: matching thresholds are strictly positive, so a
// zero similarity can neither become a match nor consume a ground-truth unit.
struct ImageMatchTable {
  std::map<int, int> gt_counts;  // class -> ground-truth units in this image
  struct Sim {
    int gt = 0;          // position among the image's gt units of class_id, in gt order
    double value = 0.0;  // nonzero similarity
  };
  struct Pred {
    int class_id = 0;
    double score = 0.0;
    std::int64_t ingest = 0;
    std::uint32_t sims_begin = 0;  // arena range, ascending gt position
    std::uint32_t sims_end = 0;
  };
  std::vector<Pred> preds;
  std::vector<Sim> sims;  // shared arena
};

ImageMatchTable build_match_table(std::span<const UnitShape> gts,
                                  std::span<const UnitShape> preds);
ImageMatchTable build_person_table(std::span<const PersonUnit> gts,
                                   std::span<const PersonUnit> preds);

// Pooled per-class AP over per-image tables (ranking across images, matching
// within). class_ids lists the classes to score; classes without ground
// truth anywhere are reported undefined and excluded from the overall mean.
ApReport ap_from_tables(ApMetric metric, Task task,
                        std::span<const ImageMatchTable> tables,
                        std::span<const int> class_ids, std::span<const double> thresholds,
                        const ApConfig& config = {});

// ---- volume metrics over flat unit lists ----------------------------------

ApReport ap_r_vol(std::span<const EvalUnit> gt_units, std::span<const EvalUnit> pred_units,
                  std::span<const double> thresholds, int n_classes,
                  const ApConfig& config = {});
ApReport ap_cr_vol(std::span<const EvalUnit> gt_units, std::span<const EvalUnit> pred_units,
                   std::span<const double> thresholds, Task task, int n_classes,
                   const ApConfig& config = {});
ApReport ap_p_vol(std::span<const PersonUnit> gt_persons,
                  std::span<const PersonUnit> pred_persons,
                  std::span<const double> thresholds, const ApConfig& config = {});

}  // namespace ccihp
