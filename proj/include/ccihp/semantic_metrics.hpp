#pragma once

#include <Eigen/Dense>

#include <cstdint>

#include "ccihp/errors.hpp"
#include "ccihp/maskcore.hpp"

namespace ccihp {

// Pixel confusion counts for one semantic task. counts(g, p) is the number
// of pixels with ground-truth class g predicted as class p; row/column 0 is
// background. Counts are 64-bit so dataset-scale accumulation cannot wrap.
struct ConfusionMatrix {
  Task task = Task::attribute;
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts;

  ConfusionMatrix() = default;
  ConfusionMatrix(Task t, int n) : task(t), counts(decltype(counts)::Zero(n, n)) {}

  int n() const { return static_cast<int>(counts.rows()); }
  std::int64_t total() const { return counts.sum(); }
};

// Confusion of one image pair. n must cover every label (class ids are in
// [0, n)); throws DimensionMismatch on shape/task disagreement and
// ClassOutOfRange when a pixel label does not fit the matrix.
ConfusionMatrix accumulate(const LabelMap& gt, const LabelMap& pred, int n);
void accumulate_into(ConfusionMatrix& cm, const LabelMap& gt, const LabelMap& pred);

// Associative, commutative pixel-count addition; throws ShapeMismatch when
// sizes or tasks differ.
ConfusionMatrix merge(const ConfusionMatrix& a, const ConfusionMatrix& b);
void merge_into(ConfusionMatrix& into, const ConfusionMatrix& from);

// Per-class IoU = TP / (TP + FP + FN). Classes whose union is empty carry
// NaN (undefined; never silently zero). Index 0 is background.
Eigen::ArrayXd iou_per_class(const ConfusionMatrix& cm);

// Per-class Dice = 2*TP / (2*TP + FP + FN), same undefined convention.
Eigen::ArrayXd dice_per_class(const ConfusionMatrix& cm);

enum class MeanPolicy { foreground_only, with_background };
const char* to_string(MeanPolicy policy);
MeanPolicy mean_policy_from_string(const std::string& name);  // throws ConfigError

struct MeanIou {
  double mean = 0.0;
  Eigen::ArrayXd per_class;  // NaN where undefined
};

// Mean over defined classes of the policy set; throws AllUndefined when the
// set has no defined class.
MeanIou mean_iou(const ConfusionMatrix& cm, MeanPolicy policy);

}  // namespace ccihp
