#include "ccihp/semantic_metrics.hpp"

#include <cmath>
#include <limits>

namespace ccihp {

namespace {
constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();
}

void accumulate_into(ConfusionMatrix& cm, const LabelMap& gt, const LabelMap& pred) {
  if (gt.height() != pred.height() || gt.width() != pred.width()) {
    throw DimensionMismatch("accumulate: ground truth and prediction dimensions differ");
  }
  if (gt.task() != pred.task() || gt.task() != cm.task) {
    throw DimensionMismatch("accumulate: task mismatch");
  }
  const int n = cm.n();
  const std::int32_t* g = gt.grid().data();
  const std::int32_t* p = pred.grid().data();
  const std::int64_t hw = static_cast<std::int64_t>(gt.height()) * gt.width();
  auto* counts = cm.counts.data();  // column-major (g, p) -> g + p*n
  for (std::int64_t q = 0; q < hw; ++q) {
    const std::int32_t gv = g[q];
    const std::int32_t pv = p[q];
    if (gv < 0 || gv >= n || pv < 0 || pv >= n) {
      throw ClassOutOfRange("accumulate: pixel label outside [0, " + std::to_string(n) + ")");
    }
    counts[gv + static_cast<std::int64_t>(pv) * n] += 1;
  }
}

ConfusionMatrix accumulate(const LabelMap& gt, const LabelMap& pred, int n) {
  if (n < 1) throw DimensionMismatch("accumulate: class span must be positive");
  ConfusionMatrix cm(gt.task(), n);
  accumulate_into(cm, gt, pred);
  return cm;
}

void merge_into(ConfusionMatrix& into, const ConfusionMatrix& from) {
  if (into.task != from.task || into.n() != from.n()) {
    throw ShapeMismatch("merge: confusion matrices have different task or size");
  }
  into.counts += from.counts;
}

ConfusionMatrix merge(const ConfusionMatrix& a, const ConfusionMatrix& b) {
  ConfusionMatrix out = a;
  merge_into(out, b);
  return out;
}

Eigen::ArrayXd iou_per_class(const ConfusionMatrix& cm) {
  const int n = cm.n();
  Eigen::ArrayXd out(n);
  for (int c = 0; c < n; ++c) {
    const std::int64_t tp = cm.counts(c, c);
    const std::int64_t fn = cm.counts.row(c).sum() - tp;
    const std::int64_t fp = cm.counts.col(c).sum() - tp;
    const std::int64_t denom = tp + fp + fn;
    out[c] = denom > 0 ? static_cast<double>(tp) / static_cast<double>(denom) : kUndefined;
  }
  return out;
}

Eigen::ArrayXd dice_per_class(const ConfusionMatrix& cm) {
  const int n = cm.n();
  Eigen::ArrayXd out(n);
  for (int c = 0; c < n; ++c) {
    const std::int64_t tp = cm.counts(c, c);
    const std::int64_t fn = cm.counts.row(c).sum() - tp;
    const std::int64_t fp = cm.counts.col(c).sum() - tp;
    const std::int64_t denom = 2 * tp + fp + fn;
    out[c] = denom > 0 ? 2.0 * static_cast<double>(tp) / static_cast<double>(denom) : kUndefined;
  }
  return out;
}

const char* to_string(MeanPolicy policy) {
  return policy == MeanPolicy::foreground_only ? "foreground_only" : "with_background";
}

MeanPolicy mean_policy_from_string(const std::string& name) {
  if (name == "foreground_only") return MeanPolicy::foreground_only;
  if (name == "with_background") return MeanPolicy::with_background;
  throw ConfigError("unknown mean policy: " + name);
}

MeanIou mean_iou(const ConfusionMatrix& cm, MeanPolicy policy) {
  MeanIou result;
  result.per_class = iou_per_class(cm);
  const int first = policy == MeanPolicy::with_background ? 0 : 1;
  double sum = 0.0;
  int defined = 0;
  for (int c = first; c < cm.n(); ++c) {
    if (!std::isnan(result.per_class[c])) {
      sum += result.per_class[c];
      ++defined;
    }
  }
  if (defined == 0) {
    throw AllUndefined(std::string("mean_iou: every class undefined under policy ") +
                       to_string(policy));
  }
  result.mean = sum / defined;
  return result;
}

}  // namespace ccihp
