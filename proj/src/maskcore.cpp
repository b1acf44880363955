#include "ccihp/maskcore.hpp"

namespace ccihp {

const char* to_string(Task task) {
  switch (task) {
    case Task::attribute: return "attribute";
    case Task::size: return "size";
    case Task::pattern: return "pattern";
    case Task::color: return "color";
    case Task::instance: return "instance";
  }
  return "?";
}

Task task_from_string(const std::string& name) {
  for (Task t : {Task::attribute, Task::size, Task::pattern, Task::color, Task::instance}) {
    if (name == to_string(t)) return t;
  }
  throw ConfigError("unknown task name: " + name);
}

BinaryMask::BinaryMask(BitGrid grid) : grid_(std::move(grid)) {
  const int h = height(), w = width();
  const bool* p = grid_.data();
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c, ++p) {
      if (*p) {
        ++area_;
        bbox_.extend(c, r);
      }
    }
  }
}

BinaryMask BinaryMask::zeros(Eigen::Index height, Eigen::Index width) {
  return BinaryMask(BitGrid::Constant(height, width, false));
}

std::int64_t RleMask::area() const {
  std::int64_t a = 0;
  for (std::size_t i = 1; i < counts.size(); i += 2) a += counts[i];
  return a;
}

RleBuilder::RleBuilder(int height, int width) : height_(height), width_(width) {
  // Units typically span tens of runs; seeding the capacity spares several
  // growth reallocations per extracted unit, which crowded images feel.
  counts_.reserve(32);
}

void RleBuilder::add(std::int64_t linear_index) {
  if (counts_.empty()) {
    counts_.push_back(linear_index);  // leading background, may be 0
    counts_.push_back(1);
  } else if (linear_index == last_ + 1) {
    counts_.back() += 1;
  } else {
    counts_.push_back(linear_index - last_ - 1);
    counts_.push_back(1);
  }
  last_ = linear_index;
  ++area_;
  bbox_.extend(static_cast<int>(linear_index % width_), static_cast<int>(linear_index / width_));
}

RleMask RleBuilder::finish() {
  const std::int64_t hw = static_cast<std::int64_t>(height_) * width_;
  if (counts_.empty()) {
    counts_.push_back(hw);  // all background
  } else if (last_ < hw - 1) {
    counts_.push_back(hw - 1 - last_);
  }
  RleMask out{height_, width_, std::move(counts_)};
  counts_.clear();
  return out;
}

RleMask rle_encode(const BinaryMask& mask) {
  RleBuilder builder(mask.height(), mask.width());
  const bool* p = mask.grid().data();
  const std::int64_t hw = static_cast<std::int64_t>(mask.height()) * mask.width();
  for (std::int64_t q = 0; q < hw; ++q) {
    if (p[q]) builder.add(q);
  }
  return builder.finish();
}

void rle_validate(const RleMask& rle) {
  if (rle.height <= 0 || rle.width <= 0) {
    throw CountsMismatch("rle: mask dimensions must be positive");
  }
  const std::int64_t hw = static_cast<std::int64_t>(rle.height) * rle.width;
  std::int64_t sum = 0;
  for (std::size_t i = 0; i < rle.counts.size(); ++i) {
    const std::int64_t c = rle.counts[i];
    if (c < 0) throw NonCanonical("rle: negative run length");
    if (c == 0 && i != 0) throw NonCanonical("rle: zero-length interior run");
    sum += c;
  }
  if (sum != hw) {
    throw CountsMismatch("rle: counts sum to " + std::to_string(sum) + ", expected " +
                         std::to_string(hw));
  }
}

BinaryMask rle_decode(const RleMask& rle) {
  rle_validate(rle);
  BitGrid grid = BitGrid::Constant(rle.height, rle.width, false);
  bool* p = grid.data();
  std::int64_t pos = 0;
  bool foreground = false;
  for (std::int64_t c : rle.counts) {
    if (foreground) {
      for (std::int64_t q = pos; q < pos + c; ++q) p[q] = true;
    }
    pos += c;
    foreground = !foreground;
  }
  return BinaryMask(std::move(grid));
}

LabelMap::LabelMap(Task task, LabelGrid grid, int max_index)
    : task_(task), grid_(std::move(grid)), max_index_(max_index) {
  if (grid_.rows() <= 0 || grid_.cols() <= 0) {
    throw DimensionMismatch("LabelMap: dimensions must be positive");
  }
  const std::int32_t lo = grid_.minCoeff();
  const std::int32_t hi = grid_.maxCoeff();
  if (lo < 0 || hi > max_index_) {
    throw ClassOutOfRange("LabelMap(" + std::string(to_string(task)) + "): value " +
                          std::to_string(lo < 0 ? lo : hi) + " outside [0, " +
                          std::to_string(max_index_) + "]");
  }
}

LabelMap LabelMap::unchecked(Task task, LabelGrid grid, int max_index) {
  LabelMap m;
  m.task_ = task;
  m.grid_ = std::move(grid);
  m.max_index_ = max_index;
  return m;
}

BinaryMask class_mask(const LabelMap& map, int class_id) {
  if (class_id < 0 || class_id > map.max_index()) {
    throw ClassOutOfRange("class_mask: class " + std::to_string(class_id) + " outside [0, " +
                          std::to_string(map.max_index()) + "]");
  }
  return BinaryMask((map.grid() == class_id).eval());
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw DimensionMismatch("mask_iou: masks have different dimensions");
  }
  if (a.area() == 0 && b.area() == 0) return 0.0;
  const std::int64_t inter = (a.grid() && b.grid()).count();
  const std::int64_t uni = a.area() + b.area() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

// Streams foreground intervals [start, end) of an RLE in pixel order.
struct RunCursor {
  const std::vector<std::int64_t>& counts;
  std::size_t i = 0;      // index of the next run
  std::int64_t pos = 0;   // linear pixel position
  std::int64_t start = 0, end = 0;

  explicit RunCursor(const RleMask& m) : counts(m.counts) { advance(); }

  bool valid() const { return start < end; }

  void advance() {
    start = end = 0;
    while (i < counts.size()) {
      const bool foreground = (i % 2) == 1;
      const std::int64_t c = counts[i];
      ++i;
      if (foreground && c > 0) {
        start = pos;
        end = pos + c;
        pos = end;
        return;
      }
      pos += c;
    }
  }
};

}  // namespace

std::int64_t rle_intersection_area(const RleMask& a, const RleMask& b) {
  RunCursor ca(a), cb(b);
  std::int64_t inter = 0;
  while (ca.valid() && cb.valid()) {
    const std::int64_t lo = std::max(ca.start, cb.start);
    const std::int64_t hi = std::min(ca.end, cb.end);
    if (hi > lo) inter += hi - lo;
    if (ca.end <= cb.end) {
      ca.advance();
    } else {
      cb.advance();
    }
  }
  return inter;
}

double rle_iou(const RleMask& a, const RleMask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw DimensionMismatch("rle_iou: masks have different dimensions");
  }
  const std::int64_t area_a = a.area();
  const std::int64_t area_b = b.area();
  if (area_a == 0 && area_b == 0) return 0.0;
  const std::int64_t inter = rle_intersection_area(a, b);
  const std::int64_t uni = area_a + area_b - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace ccihp
