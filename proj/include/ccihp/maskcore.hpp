#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ccihp/errors.hpp"

namespace ccihp {

// The five per-pixel annotation rasters of one image. The four semantic
// tasks share machinery; the instance map carries person ids instead of
// class ids.
enum class Task : int { attribute = 0, size = 1, pattern = 2, color = 3, instance = 4 };

inline constexpr std::array<Task, 4> kSemanticTasks = {Task::attribute, Task::size,
                                                       Task::pattern, Task::color};
// Tasks whose classes characterize an attribute region.
inline constexpr std::array<Task, 3> kCharacteristicTasks = {Task::size, Task::pattern,
                                                             Task::color};

const char* to_string(Task task);
Task task_from_string(const std::string& name);  // throws ConfigError

// Row-major dense storage; value 0 is background everywhere.
using LabelGrid = Eigen::Array<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using BitGrid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Half-open pixel box [x0,x1) x [y0,y1). Empty when x1<=x0.
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool empty() const { return x1 <= x0 || y1 <= y0; }
  bool intersects(const Box& o) const {
    return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1;
  }
  void extend(int x, int y) {
    if (empty()) {
      x0 = x; x1 = x + 1; y0 = y; y1 = y + 1;
      return;
    }
    if (x < x0) x0 = x;
    if (x + 1 > x1) x1 = x + 1;
    if (y < y0) y0 = y;
    if (y + 1 > y1) y1 = y + 1;
  }
};

// Single-class membership raster. Area and bounding box are computed once
// at construction and cached; instances are immutable afterwards.
class BinaryMask {
 public:
  BinaryMask() = default;
  explicit BinaryMask(BitGrid grid);
  static BinaryMask zeros(Eigen::Index height, Eigen::Index width);

  int height() const { return static_cast<int>(grid_.rows()); }
  int width() const { return static_cast<int>(grid_.cols()); }
  std::int64_t area() const { return area_; }
  bool empty_mask() const { return area_ == 0; }
  const Box& bbox() const { return bbox_; }
  const BitGrid& grid() const { return grid_; }
  bool at(int row, int col) const { return grid_(row, col); }

 private:
  BitGrid grid_;
  std::int64_t area_ = 0;
  Box bbox_;
};

// Canonical run-length encoding of a BinaryMask: row-major pixel order,
// alternating background/foreground runs starting with background. counts[0]
// may be 0 (mask whose first pixel is foreground); every later run is > 0;
// counts sum to height*width.
struct RleMask {
  int height = 0;
  int width = 0;
  std::vector<std::int64_t> counts;

  std::int64_t area() const;  // total foreground
};

// Builds the canonical RLE of a mask from its set pixels, fed in strictly
// increasing row-major order. Lets extraction emit many unit RLEs from one
// raster pass without materializing dense grids.
class RleBuilder {
 public:
  RleBuilder() = default;
  RleBuilder(int height, int width);

  void add(std::int64_t linear_index);
  RleMask finish();  // appends the trailing background run; builder is spent

  std::int64_t area() const { return area_; }
  const Box& bbox() const { return bbox_; }

 private:
  int height_ = 0, width_ = 0;
  std::vector<std::int64_t> counts_;
  std::int64_t last_ = -1;
  std::int64_t area_ = 0;
  Box bbox_;
};

// Multi-class label raster for one task. Values are validated against the
// declared maximum index at construction unless `unchecked` is used (the
// dataset validator needs to look at out-of-range rasters).
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(Task task, LabelGrid grid, int max_index);
  static LabelMap unchecked(Task task, LabelGrid grid, int max_index);

  int height() const { return static_cast<int>(grid_.rows()); }
  int width() const { return static_cast<int>(grid_.cols()); }
  Task task() const { return task_; }
  int max_index() const { return max_index_; }
  const LabelGrid& grid() const { return grid_; }
  std::int32_t at(int row, int col) const { return grid_(row, col); }

 private:
  Task task_ = Task::attribute;
  LabelGrid grid_;
  int max_index_ = 0;
};

RleMask rle_encode(const BinaryMask& mask);
// Throws CountsMismatch (sum != h*w or non-positive dims) and NonCanonical
// (interior zero run, negative run).
BinaryMask rle_decode(const RleMask& rle);
// The same checks without materializing the grid.
void rle_validate(const RleMask& rle);

// Membership mask of one class. Throws ClassOutOfRange when class_id is
// outside [0, max_index].
BinaryMask class_mask(const LabelMap& map, int class_id);

// Intersection over union; 0.0 when both masks are empty.
double mask_iou(const BinaryMask& a, const BinaryMask& b);

// Same quantity computed on run representations (used by the evaluation
// pipeline so cost scales with run count, not raster area).
double rle_iou(const RleMask& a, const RleMask& b);
std::int64_t rle_intersection_area(const RleMask& a, const RleMask& b);

}  // namespace ccihp
