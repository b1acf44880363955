#include "ccihp/instance_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

namespace ccihp {

namespace {

constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();

void validate_thresholds(std::span<const double> thresholds) {
  if (thresholds.empty()) throw ConfigError("thresholds: empty list");
  double prev = 0.0;
  for (double t : thresholds) {
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("thresholds: values must lie strictly in (0,1)");
    if (t <= prev) throw ConfigError("thresholds: values must be strictly increasing");
    prev = t;
  }
}

// Accumulates per-key RLE builders over one raster pass, preserving first
// appearance order (which defines ingest order of the produced units).
class ShapeAccum {
 public:
  ShapeAccum(int height, int width) : height_(height), width_(width) {
    slots_.reserve(32);
    entries_.reserve(32);
    cache_keys_.fill(-1);
  }

  void add(std::int64_t key, int instance_id, int attribute_id, int class_id,
           std::int64_t linear_index) {
    // Raster rows alternate between the keys of the instance bands they
    // cross, and consecutive pixels repeat the previous key. A last-key
    // shortcut plus a direct-mapped key cache keeps the per-pixel path free
    // of hash lookups even when many units are live at once, so scan cost
    // stays tied to area rather than to area times crowding.
    if (key != last_key_) {
      last_key_ = key;
      const std::size_t c = static_cast<std::size_t>(key ^ (key >> 16)) & (kCacheSlots - 1);
      if (cache_keys_[c] == key) {
        last_slot_ = cache_slots_[c];
      } else {
        auto [it, inserted] = slots_.try_emplace(key, entries_.size());
        if (inserted) entries_.push_back({instance_id, attribute_id, class_id,
                                          RleBuilder(height_, width_)});
        cache_keys_[c] = key;
        cache_slots_[c] = it->second;
        last_slot_ = it->second;
      }
    }
    entries_[last_slot_].builder.add(linear_index);
  }

  std::vector<UnitShape> finish(std::span<const double> scores) {
    std::vector<UnitShape> out;
    out.reserve(entries_.size());
    for (auto& e : entries_) {
      UnitShape s;
      s.class_id = e.class_id;
      s.attribute_id = e.attribute_id;
      s.instance_id = e.instance_id;
      s.area = e.builder.area();
      s.bbox = e.builder.bbox();
      s.rle = e.builder.finish();
      if (!scores.empty()) s.score = scores[e.instance_id - 1];
      s.ingest = static_cast<std::int64_t>(out.size());
      out.push_back(std::move(s));
    }
    return out;
  }

 private:
  struct Entry {
    int instance_id, attribute_id, class_id;
    RleBuilder builder;
  };
  static constexpr std::size_t kCacheSlots = 64;

  int height_, width_;
  std::unordered_map<std::int64_t, std::size_t> slots_;
  std::vector<Entry> entries_;
  std::int64_t last_key_ = -1;  // pack_key never yields negatives
  std::size_t last_slot_ = 0;
  std::array<std::int64_t, kCacheSlots> cache_keys_;
  std::array<std::size_t, kCacheSlots> cache_slots_ = {};
};

std::int64_t pack_key(std::int64_t instance_id, int attribute_id, int class_id) {
  return (instance_id << 16) | (static_cast<std::int64_t>(attribute_id) << 8) | class_id;
}

void require_same_dims(const LabelMap& a, const LabelMap& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw DimensionMismatch(std::string(what) + ": raster dimensions differ");
  }
}

void require_scores_cover(std::span<const double> scores, const LabelMap& instance_map) {
  if (scores.empty()) return;
  const std::int32_t max_id = instance_map.grid().maxCoeff();
  if (static_cast<std::int64_t>(scores.size()) < max_id) {
    throw SchemaError("scores: need one score per instance id");
  }
}

// Bounding box of an RLE without decoding. A foreground run that crosses a
// row boundary necessarily touches both image borders column-wise.
Box rle_box(const RleMask& m) {
  Box box;
  std::int64_t pos = 0;
  bool foreground = false;
  for (std::int64_t c : m.counts) {
    if (foreground && c > 0) {
      const std::int64_t first = pos, last = pos + c - 1;
      const int r0 = static_cast<int>(first / m.width), r1 = static_cast<int>(last / m.width);
      if (r0 == r1) {
        box.extend(static_cast<int>(first % m.width), r0);
        box.extend(static_cast<int>(last % m.width), r1);
      } else {
        box.extend(0, r0);
        box.extend(m.width - 1, r1);
      }
    }
    pos += c;
    foreground = !foreground;
  }
  return box;
}

double shape_sim(const UnitShape& a, const UnitShape& b) {
  if (!a.bbox.intersects(b.bbox)) return 0.0;
  return rle_iou(a.rle, b.rle);
}

// ---- pooled greedy matching + AP integration ----

struct PooledPred {
  double score = 0.0;
  std::int64_t ingest = 0;
  std::size_t order = 0;  // final tie key: pooling sequence
  int table = 0;
  const ImageMatchTable::Sim* sims_begin = nullptr;
  const ImageMatchTable::Sim* sims_end = nullptr;
};

void rank(std::vector<PooledPred>& preds) {
  std::sort(preds.begin(), preds.end(), [](const PooledPred& a, const PooledPred& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.ingest != b.ingest) return a.ingest < b.ingest;
    return a.order < b.order;
  });
}

// Visits ranked predictions; each takes the highest-IoU unconsumed gt of its
// image (first on ties) and is a TP iff that IoU reaches the threshold.
std::vector<char> run_greedy(const std::vector<PooledPred>& ranked,
                             std::vector<std::vector<char>>& consumed, double threshold,
                             std::vector<std::pair<int, int>>* matches = nullptr) {
  for (auto& c : consumed) std::fill(c.begin(), c.end(), 0);
  std::vector<char> tp(ranked.size(), 0);
  if (matches) matches->assign(ranked.size(), {-1, -1});
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    auto& used = consumed[ranked[k].table];
    int best = -1;
    double best_iou = -1.0;
    for (const auto* s = ranked[k].sims_begin; s != ranked[k].sims_end; ++s) {
      if (!used[s->gt] && s->value > best_iou) {
        best = s->gt;
        best_iou = s->value;
      }
    }
    if (best >= 0 && best_iou >= threshold) {
      tp[k] = 1;
      used[best] = 1;
      if (matches) (*matches)[k] = {ranked[k].table, best};
    }
  }
  return tp;
}

double ap_from_flags(const std::vector<char>& tp, std::int64_t n_gt) {
  if (n_gt <= 0) throw NoGroundTruth("average precision needs at least one ground-truth unit");
  const std::size_t n = tp.size();
  if (n == 0) return 0.0;
  // precision at every rank, then the running-max envelope from the tail;
  // each TP contributes one recall step of 1/n_gt.
  std::vector<double> prec(n);
  std::int64_t ctp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (tp[i]) ++ctp;
    prec[i] = static_cast<double>(ctp) / static_cast<double>(i + 1);
  }
  for (std::size_t i = n - 1; i > 0; --i) {
    if (prec[i] > prec[i - 1]) prec[i - 1] = prec[i];
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (tp[i]) sum += prec[i];
  }
  return sum / static_cast<double>(n_gt);
}

double mean_of(const std::vector<double>& values) {
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

}  // namespace

const char* to_string(UnitGranularity granularity) {
  return granularity == UnitGranularity::per_attribute_region ? "per_attribute_region"
                                                              : "per_instance";
}

UnitGranularity unit_granularity_from_string(const std::string& name) {
  if (name == "per_attribute_region") return UnitGranularity::per_attribute_region;
  if (name == "per_instance") return UnitGranularity::per_instance;
  throw ConfigError("unknown unit granularity: " + name);
}

const char* to_string(ApMetric metric) {
  switch (metric) {
    case ApMetric::ap_r: return "ap_r_vol";
    case ApMetric::ap_p: return "ap_p_vol";
    case ApMetric::ap_cr: return "ap_cr_vol";
  }
  return "?";
}

const char* table_label(ApMetric metric) {
  switch (metric) {
    case ApMetric::ap_r: return "AP^r_vol";
    case ApMetric::ap_p: return "AP^p_vol";
    case ApMetric::ap_cr: return "AP^cr_vol";
  }
  return "?";
}

std::vector<double> default_ap_thresholds() {
  std::vector<double> t;
  for (int i = 1; i <= 9; ++i) t.push_back(i / 10.0);
  return t;
}

// ---- extraction ----

std::vector<UnitShape> region_shapes(const LabelMap& instance_map, const LabelMap& attribute_map,
                                     std::span<const double> scores) {
  require_same_dims(instance_map, attribute_map, "region units");
  require_scores_cover(scores, instance_map);
  ShapeAccum acc(instance_map.height(), instance_map.width());
  const std::int32_t* pi = instance_map.grid().data();
  const std::int32_t* pa = attribute_map.grid().data();
  const std::int64_t hw = static_cast<std::int64_t>(instance_map.height()) * instance_map.width();
  for (std::int64_t q = 0; q < hw; ++q) {
    const std::int32_t i = pi[q];
    if (i == 0) continue;
    const std::int32_t a = pa[q];
    if (a == 0) continue;
    acc.add(pack_key(i, a, 0), i, a, a, q);
  }
  return acc.finish(scores);
}

std::vector<UnitShape> region_shapes(std::span<const RleMask> instance_masks,
                                     std::span<const double> scores,
                                     const LabelMap& attribute_map) {
  if (scores.size() != instance_masks.size()) {
    throw SchemaError("scores: need exactly one score per instance mask");
  }
  ShapeAccum acc(attribute_map.height(), attribute_map.width());
  const std::int32_t* pa = attribute_map.grid().data();
  for (std::size_t m = 0; m < instance_masks.size(); ++m) {
    const RleMask& mask = instance_masks[m];
    if (mask.height != attribute_map.height() || mask.width != attribute_map.width()) {
      throw DimensionMismatch("region units: instance mask dimensions differ from rasters");
    }
    const int id = static_cast<int>(m) + 1;
    std::int64_t pos = 0;
    bool foreground = false;
    for (std::int64_t c : mask.counts) {
      if (foreground) {
        for (std::int64_t q = pos; q < pos + c; ++q) {
          const std::int32_t a = pa[q];
          if (a != 0) acc.add(pack_key(id, a, 0), id, a, a, q);
        }
      }
      pos += c;
      foreground = !foreground;
    }
  }
  return acc.finish(scores);
}

namespace {

std::vector<char> characterizable_flags(const Taxonomy& taxonomy, const LabelMap& attribute_map) {
  const int n = taxonomy.class_count(Task::attribute);
  if (attribute_map.max_index() > n) {
    throw ClassOutOfRange("characterized units: attribute map exceeds catalog");
  }
  std::vector<char> flags(n + 1, 0);
  for (int id : taxonomy.characterizable_ids()) flags[id] = 1;
  return flags;
}

void require_characteristic(Task task) {
  if (task != Task::size && task != Task::pattern && task != Task::color) {
    throw NotACharacteristicTask(std::string("characterized units: task '") + to_string(task) +
                                 "' carries no characteristics");
  }
}

}  // namespace

std::vector<UnitShape> characterized_shapes(const LabelMap& instance_map,
                                            const LabelMap& attribute_map,
                                            const LabelMap& characteristic_map,
                                            const Taxonomy& taxonomy, Task task,
                                            std::span<const double> scores,
                                            UnitGranularity granularity) {
  require_characteristic(task);
  require_same_dims(instance_map, attribute_map, "characterized units");
  require_same_dims(instance_map, characteristic_map, "characterized units");
  require_scores_cover(scores, instance_map);
  const auto flags = characterizable_flags(taxonomy, attribute_map);
  const bool per_attribute = granularity == UnitGranularity::per_attribute_region;

  ShapeAccum acc(instance_map.height(), instance_map.width());
  const std::int32_t* pi = instance_map.grid().data();
  const std::int32_t* pa = attribute_map.grid().data();
  const std::int32_t* pk = characteristic_map.grid().data();
  const std::int64_t hw = static_cast<std::int64_t>(instance_map.height()) * instance_map.width();
  for (std::int64_t q = 0; q < hw; ++q) {
    const std::int32_t i = pi[q];
    if (i == 0) continue;
    const std::int32_t a = pa[q];
    if (a == 0 || !flags[a]) continue;
    const std::int32_t k = pk[q];
    if (k == 0) continue;
    if (per_attribute) {
      acc.add(pack_key(i, a, k), i, a, k, q);
    } else {
      acc.add(pack_key(i, 0, k), i, 0, k, q);
    }
  }
  return acc.finish(scores);
}

std::vector<UnitShape> characterized_shapes(std::span<const RleMask> instance_masks,
                                            std::span<const double> scores,
                                            const LabelMap& attribute_map,
                                            const LabelMap& characteristic_map,
                                            const Taxonomy& taxonomy, Task task,
                                            UnitGranularity granularity) {
  require_characteristic(task);
  require_same_dims(attribute_map, characteristic_map, "characterized units");
  if (scores.size() != instance_masks.size()) {
    throw SchemaError("scores: need exactly one score per instance mask");
  }
  const auto flags = characterizable_flags(taxonomy, attribute_map);
  const bool per_attribute = granularity == UnitGranularity::per_attribute_region;

  ShapeAccum acc(attribute_map.height(), attribute_map.width());
  const std::int32_t* pa = attribute_map.grid().data();
  const std::int32_t* pk = characteristic_map.grid().data();
  for (std::size_t m = 0; m < instance_masks.size(); ++m) {
    const RleMask& mask = instance_masks[m];
    if (mask.height != attribute_map.height() || mask.width != attribute_map.width()) {
      throw DimensionMismatch("characterized units: instance mask dimensions differ");
    }
    const int id = static_cast<int>(m) + 1;
    std::int64_t pos = 0;
    bool foreground = false;
    for (std::int64_t c : mask.counts) {
      if (foreground) {
        for (std::int64_t q = pos; q < pos + c; ++q) {
          const std::int32_t a = pa[q];
          if (a == 0 || !flags[a]) continue;
          const std::int32_t k = pk[q];
          if (k == 0) continue;
          if (per_attribute) {
            acc.add(pack_key(id, a, k), id, a, k, q);
          } else {
            acc.add(pack_key(id, 0, k), id, 0, k, q);
          }
        }
      }
      pos += c;
      foreground = !foreground;
    }
  }
  return acc.finish(scores);
}

// ---- person units ----

namespace {

std::vector<PersonUnit> assemble_persons(std::vector<std::pair<int, RleBuilder>>& person_builders,
                                         std::vector<UnitShape>& part_shapes,
                                         std::span<const double> scores,
                                         const std::string& image_id) {
  std::unordered_map<int, std::vector<PersonPart>> parts_by_instance;
  for (auto& s : part_shapes) {
    parts_by_instance[s.instance_id].push_back(
        PersonPart{s.class_id, std::move(s.rle), s.area, s.bbox});
  }
  std::vector<PersonUnit> out;
  out.reserve(person_builders.size());
  for (auto& [id, builder] : person_builders) {
    PersonUnit p;
    p.image_id = image_id;
    p.instance_id = id;
    p.area = builder.area();
    p.bbox = builder.bbox();
    p.rle = builder.finish();
    auto it = parts_by_instance.find(id);
    if (it != parts_by_instance.end()) {
      p.parts = std::move(it->second);
      std::sort(p.parts.begin(), p.parts.end(),
                [](const PersonPart& a, const PersonPart& b) { return a.class_id < b.class_id; });
    }
    if (!scores.empty()) p.score = scores[id - 1];
    p.ingest = static_cast<std::int64_t>(out.size());
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

std::vector<PersonUnit> person_units(const LabelMap& instance_map, const LabelMap& attribute_map,
                                     const std::string& image_id,
                                     std::span<const double> scores) {
  require_same_dims(instance_map, attribute_map, "person units");
  require_scores_cover(scores, instance_map);

  std::vector<std::size_t> person_slot;  // indexed by instance id, lazily grown
  std::vector<std::pair<int, RleBuilder>> person_builders;
  const int h = instance_map.height(), w = instance_map.width();
  ShapeAccum parts(h, w);
  const std::int32_t* pi = instance_map.grid().data();
  const std::int32_t* pa = attribute_map.grid().data();
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  constexpr std::size_t kUnseen = static_cast<std::size_t>(-1);
  for (std::int64_t q = 0; q < hw; ++q) {
    const std::int32_t i = pi[q];
    if (i == 0) continue;
    if (static_cast<std::size_t>(i) >= person_slot.size()) {
      person_slot.resize(static_cast<std::size_t>(i) + 1, kUnseen);
    }
    std::size_t& slot = person_slot[static_cast<std::size_t>(i)];
    if (slot == kUnseen) {
      slot = person_builders.size();
      person_builders.emplace_back(i, RleBuilder(h, w));
    }
    person_builders[slot].second.add(q);
    const std::int32_t a = pa[q];
    if (a != 0) parts.add(pack_key(i, a, 0), i, a, a, q);
  }
  auto part_shapes = parts.finish({});
  return assemble_persons(person_builders, part_shapes, scores, image_id);
}

std::vector<PersonUnit> person_units(std::span<const RleMask> instance_masks,
                                     std::span<const double> scores,
                                     const LabelMap& attribute_map,
                                     const std::string& image_id) {
  if (scores.size() != instance_masks.size()) {
    throw SchemaError("scores: need exactly one score per instance mask");
  }
  std::vector<PersonUnit> out;
  const std::int32_t* pa = attribute_map.grid().data();
  for (std::size_t m = 0; m < instance_masks.size(); ++m) {
    const RleMask& mask = instance_masks[m];
    if (mask.height != attribute_map.height() || mask.width != attribute_map.width()) {
      throw DimensionMismatch("person units: instance mask dimensions differ from rasters");
    }
    if (mask.area() == 0) continue;  // caller counts discarded empties
    const int id = static_cast<int>(m) + 1;
    ShapeAccum parts(mask.height, mask.width);
    std::int64_t pos = 0;
    bool foreground = false;
    for (std::int64_t c : mask.counts) {
      if (foreground) {
        for (std::int64_t q = pos; q < pos + c; ++q) {
          const std::int32_t a = pa[q];
          if (a != 0) parts.add(pack_key(id, a, 0), id, a, a, q);
        }
      }
      pos += c;
      foreground = !foreground;
    }
    PersonUnit p;
    p.image_id = image_id;
    p.instance_id = id;
    p.rle = mask;
    p.area = mask.area();
    p.bbox = rle_box(mask);
    auto part_shapes = parts.finish({});
    p.parts.reserve(part_shapes.size());
    for (auto& s : part_shapes) {
      p.parts.push_back(PersonPart{s.class_id, std::move(s.rle), s.area, s.bbox});
    }
    std::sort(p.parts.begin(), p.parts.end(),
              [](const PersonPart& a, const PersonPart& b) { return a.class_id < b.class_id; });
    p.score = scores[m];
    p.ingest = static_cast<std::int64_t>(out.size());
    out.push_back(std::move(p));
  }
  return out;
}

// ---- fused extraction ----

namespace {

// The region family and the person-part family accumulate the same
// (instance, attribute) pixel stream, so one accumulator serves both; the
// parts are copied out of the finished units. That keeps the number of hot
// run builders -- the L1 working set of the scan -- as small as possible.
struct BundleAccums {
  ShapeAccum region_parts;
  std::array<ShapeAccum, 3> characterized;

  BundleAccums(int h, int w)
      : region_parts(h, w),
        characterized{ShapeAccum(h, w), ShapeAccum(h, w), ShapeAccum(h, w)} {}
};

// Splits the shared (instance, attribute) units into the region vector and
// the person-part shapes, copying only when both families need them.
void split_region_parts(std::vector<UnitShape>&& units, const UnitFamilies& families,
                        std::vector<UnitShape>* region, std::vector<UnitShape>* part_shapes) {
  if (families.persons) {
    if (families.region) {
      *part_shapes = units;  // deep copy; parts keep their own RLE storage
    } else {
      *part_shapes = std::move(units);
      return;
    }
  }
  if (families.region) *region = std::move(units);
}

std::array<const std::int32_t*, 3> characteristic_grids(
    const LabelMap& reference, const std::array<const LabelMap*, 3>& characteristic_maps) {
  std::array<const std::int32_t*, 3> pk = {nullptr, nullptr, nullptr};
  for (std::size_t t = 0; t < pk.size(); ++t) {
    if (characteristic_maps[t] == nullptr) {
      throw ConfigError("unit bundle: characterized extraction needs all characteristic maps");
    }
    require_same_dims(reference, *characteristic_maps[t], "characterized units");
    pk[t] = characteristic_maps[t]->grid().data();
  }
  return pk;
}

std::vector<PersonPart> take_parts(std::unordered_map<int, std::vector<PersonPart>>& by_instance,
                                   int instance_id) {
  std::vector<PersonPart> parts;
  auto it = by_instance.find(instance_id);
  if (it != by_instance.end()) {
    parts = std::move(it->second);
    std::sort(parts.begin(), parts.end(),
              [](const PersonPart& a, const PersonPart& b) { return a.class_id < b.class_id; });
  }
  return parts;
}

}  // namespace

UnitBundle extract_unit_bundle(const LabelMap& instance_map, const LabelMap& attribute_map,
                               const std::array<const LabelMap*, 3>& characteristic_maps,
                               const Taxonomy& taxonomy, UnitGranularity granularity,
                               const UnitFamilies& families, const std::string& image_id,
                               std::span<const double> scores) {
  require_same_dims(instance_map, attribute_map, "unit bundle");
  require_scores_cover(scores, instance_map);
  const int h = instance_map.height(), w = instance_map.width();

  std::array<const std::int32_t*, 3> pk = {nullptr, nullptr, nullptr};
  std::vector<char> flags;
  if (families.characterized) {
    flags = characterizable_flags(taxonomy, attribute_map);
    pk = characteristic_grids(instance_map, characteristic_maps);
  }
  const bool per_attribute = granularity == UnitGranularity::per_attribute_region;
  const bool want_ia = families.region || families.persons;

  BundleAccums acc(h, w);
  std::vector<std::size_t> person_slot;  // indexed by instance id, lazily grown
  std::vector<std::pair<int, RleBuilder>> person_builders;
  constexpr std::size_t kUnseen = static_cast<std::size_t>(-1);

  const std::int32_t* pi = instance_map.grid().data();
  const std::int32_t* pa = attribute_map.grid().data();
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  for (std::int64_t q = 0; q < hw; ++q) {
    const std::int32_t i = pi[q];
    if (i == 0) continue;
    if (families.persons) {
      if (static_cast<std::size_t>(i) >= person_slot.size()) {
        person_slot.resize(static_cast<std::size_t>(i) + 1, kUnseen);
      }
      std::size_t& slot = person_slot[static_cast<std::size_t>(i)];
      if (slot == kUnseen) {
        slot = person_builders.size();
        person_builders.emplace_back(i, RleBuilder(h, w));
      }
      person_builders[slot].second.add(q);
    }
    const std::int32_t a = pa[q];
    if (a == 0) continue;
    if (want_ia) acc.region_parts.add(pack_key(i, a, 0), i, a, a, q);
    if (families.characterized && flags[a]) {
      for (std::size_t t = 0; t < pk.size(); ++t) {
        const std::int32_t k = pk[t][q];
        if (k == 0) continue;
        if (per_attribute) {
          acc.characterized[t].add(pack_key(i, a, k), i, a, k, q);
        } else {
          acc.characterized[t].add(pack_key(i, 0, k), i, 0, k, q);
        }
      }
    }
  }

  UnitBundle out;
  std::vector<UnitShape> part_shapes;
  if (want_ia) {
    split_region_parts(acc.region_parts.finish(scores), families, &out.region, &part_shapes);
  }
  if (families.characterized) {
    for (std::size_t t = 0; t < out.characterized.size(); ++t) {
      out.characterized[t] = acc.characterized[t].finish(scores);
    }
  }
  if (families.persons) {
    out.persons = assemble_persons(person_builders, part_shapes, scores, image_id);
  }
  return out;
}

UnitBundle extract_unit_bundle(std::span<const RleMask> instance_masks,
                               std::span<const double> scores, const LabelMap& attribute_map,
                               const std::array<const LabelMap*, 3>& characteristic_maps,
                               const Taxonomy& taxonomy, UnitGranularity granularity,
                               const UnitFamilies& families, const std::string& image_id) {
  if (scores.size() != instance_masks.size()) {
    throw SchemaError("scores: need exactly one score per instance mask");
  }
  const int h = attribute_map.height(), w = attribute_map.width();

  std::array<const std::int32_t*, 3> pk = {nullptr, nullptr, nullptr};
  std::vector<char> flags;
  if (families.characterized) {
    flags = characterizable_flags(taxonomy, attribute_map);
    pk = characteristic_grids(attribute_map, characteristic_maps);
  }
  const bool per_attribute = granularity == UnitGranularity::per_attribute_region;
  const bool want_ia = families.region || families.persons;

  BundleAccums acc(h, w);
  std::vector<std::pair<int, const RleMask*>> kept;  // non-empty masks, in input order

  const std::int32_t* pa = attribute_map.grid().data();
  for (std::size_t m = 0; m < instance_masks.size(); ++m) {
    const RleMask& mask = instance_masks[m];
    if (mask.height != h || mask.width != w) {
      throw DimensionMismatch("unit bundle: instance mask dimensions differ from rasters");
    }
    const int id = static_cast<int>(m) + 1;
    if (families.persons && mask.area() != 0) kept.emplace_back(id, &mask);
    std::int64_t pos = 0;
    bool foreground = false;
    for (std::int64_t c : mask.counts) {
      if (foreground) {
        for (std::int64_t q = pos; q < pos + c; ++q) {
          const std::int32_t a = pa[q];
          if (a == 0) continue;
          if (want_ia) acc.region_parts.add(pack_key(id, a, 0), id, a, a, q);
          if (families.characterized && flags[a]) {
            for (std::size_t t = 0; t < pk.size(); ++t) {
              const std::int32_t k = pk[t][q];
              if (k == 0) continue;
              if (per_attribute) {
                acc.characterized[t].add(pack_key(id, a, k), id, a, k, q);
              } else {
                acc.characterized[t].add(pack_key(id, 0, k), id, 0, k, q);
              }
            }
          }
        }
      }
      pos += c;
      foreground = !foreground;
    }
  }

  UnitBundle out;
  std::vector<UnitShape> part_shapes;
  if (want_ia) {
    split_region_parts(acc.region_parts.finish(scores), families, &out.region, &part_shapes);
  }
  if (families.characterized) {
    for (std::size_t t = 0; t < out.characterized.size(); ++t) {
      out.characterized[t] = acc.characterized[t].finish(scores);
    }
  }
  if (families.persons) {
    std::unordered_map<int, std::vector<PersonPart>> parts_by_instance;
    for (auto& s : part_shapes) {
      parts_by_instance[s.instance_id].push_back(
          PersonPart{s.class_id, std::move(s.rle), s.area, s.bbox});
    }
    out.persons.reserve(kept.size());
    for (auto& [id, mask] : kept) {
      PersonUnit p;
      p.image_id = image_id;
      p.instance_id = id;
      p.rle = *mask;
      p.area = mask->area();
      p.bbox = rle_box(*mask);
      p.parts = take_parts(parts_by_instance, id);
      p.score = scores[static_cast<std::size_t>(id) - 1];
      p.ingest = static_cast<std::int64_t>(out.persons.size());
      out.persons.push_back(std::move(p));
    }
  }
  return out;
}

double person_score(const PersonUnit& pred, const PersonUnit& gt) {
  if (pred.parts.empty() && gt.parts.empty()) return 0.0;
  std::size_t i = 0, j = 0;
  double sum = 0.0;
  int n = 0;
  while (i < pred.parts.size() || j < gt.parts.size()) {
    if (j >= gt.parts.size() ||
        (i < pred.parts.size() && pred.parts[i].class_id < gt.parts[j].class_id)) {
      ++n;  // part only on the prediction side: IoU 0
      ++i;
    } else if (i >= pred.parts.size() || gt.parts[j].class_id < pred.parts[i].class_id) {
      ++n;  // part only on the ground-truth side: IoU 0
      ++j;
    } else {
      if (pred.parts[i].bbox.intersects(gt.parts[j].bbox)) {
        sum += rle_iou(pred.parts[i].rle, gt.parts[j].rle);
      }
      ++n;
      ++i;
      ++j;
    }
  }
  return sum / static_cast<double>(n);
}

double person_match_score(const BinaryMask& pred_mask, const LabelMap& pred_attribute,
                          const BinaryMask& gt_mask, const LabelMap& gt_attribute) {
  if (pred_mask.height() != pred_attribute.height() ||
      pred_mask.width() != pred_attribute.width() ||
      gt_mask.height() != gt_attribute.height() || gt_mask.width() != gt_attribute.width() ||
      pred_mask.height() != gt_mask.height() || pred_mask.width() != gt_mask.width()) {
    throw DimensionMismatch("person_match_score: raster dimensions differ");
  }
  std::map<int, BinaryMask> pred_parts, gt_parts;
  for (int c = 1; c <= pred_attribute.max_index(); ++c) {
    BinaryMask part((pred_attribute.grid() == c && pred_mask.grid()).eval());
    if (!part.empty_mask()) pred_parts.emplace(c, std::move(part));
  }
  for (int c = 1; c <= gt_attribute.max_index(); ++c) {
    BinaryMask part((gt_attribute.grid() == c && gt_mask.grid()).eval());
    if (!part.empty_mask()) gt_parts.emplace(c, std::move(part));
  }
  if (pred_parts.empty() && gt_parts.empty()) {
    throw BothEmpty("person_match_score: neither person has a foreground part");
  }
  double sum = 0.0;
  int n = 0;
  auto pi = pred_parts.begin();
  auto gi = gt_parts.begin();
  while (pi != pred_parts.end() || gi != gt_parts.end()) {
    if (gi == gt_parts.end() || (pi != pred_parts.end() && pi->first < gi->first)) {
      ++n;
      ++pi;
    } else if (pi == pred_parts.end() || gi->first < pi->first) {
      ++n;
      ++gi;
    } else {
      sum += mask_iou(pi->second, gi->second);
      ++n;
      ++pi;
      ++gi;
    }
  }
  return sum / static_cast<double>(n);
}

// ---- match tables ----

ImageMatchTable build_match_table(std::span<const UnitShape> gts,
                                  std::span<const UnitShape> preds) {
  ImageMatchTable table;
  // Group ground-truth units per class with one flat sort; a stable sort
  // keeps the given gt order within each class, which fixes the sims order.
  std::vector<std::pair<int, const UnitShape*>> by_class;
  by_class.reserve(gts.size());
  for (const auto& g : gts) {
    by_class.emplace_back(g.class_id, &g);
    table.gt_counts[g.class_id] += 1;
  }
  std::stable_sort(by_class.begin(), by_class.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  table.preds.reserve(preds.size());
  for (const auto& p : preds) {
    if (!p.score) throw SchemaError("match table: prediction unit without score");
    ImageMatchTable::Pred pr{p.class_id, *p.score, p.ingest,
                             static_cast<std::uint32_t>(table.sims.size()), 0};
    const auto lo = std::lower_bound(
        by_class.begin(), by_class.end(), p.class_id,
        [](const auto& e, int c) { return e.first < c; });
    const auto hi = std::upper_bound(
        lo, by_class.end(), p.class_id, [](int c, const auto& e) { return c < e.first; });
    for (auto it = lo; it != hi; ++it) {
      const double v = shape_sim(p, *it->second);
      if (v > 0.0) table.sims.push_back({static_cast<int>(it - lo), v});
    }
    pr.sims_end = static_cast<std::uint32_t>(table.sims.size());
    table.preds.push_back(pr);
  }
  return table;
}

ImageMatchTable build_person_table(std::span<const PersonUnit> gts,
                                   std::span<const PersonUnit> preds) {
  ImageMatchTable table;
  if (!gts.empty()) table.gt_counts[0] = static_cast<int>(gts.size());
  table.preds.reserve(preds.size());
  for (const auto& p : preds) {
    if (!p.score) throw SchemaError("match table: predicted person without score");
    ImageMatchTable::Pred pr{0, *p.score, p.ingest,
                             static_cast<std::uint32_t>(table.sims.size()), 0};
    for (std::size_t j = 0; j < gts.size(); ++j) {
      // Disjoint person boxes mean disjoint parts, so every part IoU -- and
      // with it the person score -- is exactly zero.
      if (!p.bbox.intersects(gts[j].bbox)) continue;
      const double v = person_score(p, gts[j]);
      if (v > 0.0) table.sims.push_back({static_cast<int>(j), v});
    }
    pr.sims_end = static_cast<std::uint32_t>(table.sims.size());
    table.preds.push_back(pr);
  }
  return table;
}

// ---- pooled AP ----

ApReport ap_from_tables(ApMetric metric, Task task, std::span<const ImageMatchTable> tables,
                        std::span<const int> class_ids, std::span<const double> thresholds,
                        const ApConfig& config) {
  validate_thresholds(thresholds);
  ApReport report;
  report.metric = metric;
  report.task = task;
  report.thresholds.assign(thresholds.begin(), thresholds.end());
  report.config = config;

  // Group the pooled predictions per class in one sweep (table order, then
  // within-table order, matching the ingest sequence) rather than rescanning
  // every table for every class.
  std::unordered_map<int, std::vector<PooledPred>> pooled_by_class;
  for (std::size_t i = 0; i < tables.size(); ++i) {
    const ImageMatchTable::Sim* arena = tables[i].sims.data();
    for (const auto& p : tables[i].preds) {
      auto& pool = pooled_by_class[p.class_id];
      pool.push_back(PooledPred{p.score, p.ingest, pool.size(), static_cast<int>(i),
                                arena + p.sims_begin, arena + p.sims_end});
    }
  }

  for (int cls : class_ids) {
    std::int64_t n_gt = 0;
    for (const auto& t : tables) {
      auto it = t.gt_counts.find(cls);
      if (it != t.gt_counts.end()) n_gt += it->second;
    }
    if (n_gt == 0) {
      report.undefined_classes.push_back(cls);
      continue;
    }
    static const std::vector<PooledPred> kNoPreds;
    const auto pooled_it = pooled_by_class.find(cls);
    std::vector<PooledPred> pooled =
        pooled_it == pooled_by_class.end() ? kNoPreds : pooled_it->second;
    rank(pooled);
    std::vector<std::vector<char>> consumed(tables.size());
    for (std::size_t i = 0; i < tables.size(); ++i) {
      auto it = tables[i].gt_counts.find(cls);
      consumed[i].assign(it != tables[i].gt_counts.end() ? it->second : 0, 0);
    }
    ApClassResult result;
    result.n_gt = n_gt;
    result.per_threshold.reserve(thresholds.size());
    for (double t : thresholds) {
      const auto tp = run_greedy(pooled, consumed, t);
      result.per_threshold.push_back(ap_from_flags(tp, n_gt));
    }
    result.volume = mean_of(result.per_threshold);
    report.per_class.emplace(cls, std::move(result));
  }

  if (report.per_class.empty()) {
    report.overall = kUndefined;
  } else {
    double sum = 0.0;
    for (const auto& [cls, r] : report.per_class) sum += r.volume;
    report.overall = sum / static_cast<double>(report.per_class.size());
  }
  return report;
}

// ---- contract-level operations on EvalUnit lists ----

std::vector<EvalUnit> extract_region_units(const LabelMap& instance_map,
                                           const LabelMap& attribute_map,
                                           const std::string& image_id,
                                           std::span<const double> scores) {
  auto shapes = region_shapes(instance_map, attribute_map, scores);
  std::vector<EvalUnit> units;
  units.reserve(shapes.size());
  for (auto& s : shapes) {
    units.push_back(EvalUnit{image_id, s.instance_id, s.class_id, s.attribute_id,
                             rle_decode(s.rle), s.score, s.ingest});
  }
  return units;
}

std::vector<EvalUnit> extract_characterized_units(
    const LabelMap& instance_map, const LabelMap& attribute_map,
    const LabelMap& characteristic_map, const Taxonomy& taxonomy, Task task,
    const std::string& image_id, std::span<const double> scores, UnitGranularity granularity) {
  auto shapes = characterized_shapes(instance_map, attribute_map, characteristic_map, taxonomy,
                                     task, scores, granularity);
  std::vector<EvalUnit> units;
  units.reserve(shapes.size());
  for (auto& s : shapes) {
    units.push_back(EvalUnit{image_id, s.instance_id, s.class_id, s.attribute_id,
                             rle_decode(s.rle), s.score, s.ingest});
  }
  return units;
}

MatchResult greedy_match(std::span<const EvalUnit> preds, std::span<const EvalUnit> gts,
                         double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ConfigError("greedy_match: threshold outside [0,1]");
  }
  bool have_class = false;
  int cls = 0;
  auto check_class = [&](const EvalUnit& u) {
    if (!have_class) {
      cls = u.class_id;
      have_class = true;
    } else if (u.class_id != cls) {
      throw MixedClasses("greedy_match: units of more than one class");
    }
  };
  for (const auto& g : gts) check_class(g);
  for (const auto& p : preds) check_class(p);

  // image slots in first-appearance order (ground truth first)
  std::unordered_map<std::string, int> slot;
  std::vector<std::vector<std::size_t>> gt_global;  // per slot: indices into gts
  auto slot_of = [&](const std::string& id) {
    auto [it, inserted] = slot.try_emplace(id, static_cast<int>(gt_global.size()));
    if (inserted) gt_global.emplace_back();
    return it->second;
  };
  std::vector<int> gt_slot(gts.size());
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const int s = slot_of(gts[g].image_id);
    gt_slot[g] = s;
    gt_global[s].push_back(g);
  }

  struct Ranked {
    std::size_t index;
    double score;
    std::int64_t ingest;
    int slot;
  };
  std::vector<Ranked> ranked;
  ranked.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!preds[i].score) throw SchemaError("greedy_match: prediction unit without score");
    ranked.push_back(Ranked{i, *preds[i].score, preds[i].ingest_order,
                            slot_of(preds[i].image_id)});
  }
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.ingest != b.ingest) return a.ingest < b.ingest;
    return a.index < b.index;
  });

  MatchResult result;
  result.threshold = threshold;
  result.n_gt = static_cast<std::int64_t>(gts.size());
  result.ranked.reserve(ranked.size());
  std::vector<std::vector<char>> consumed(gt_global.size());
  for (std::size_t s = 0; s < gt_global.size(); ++s) consumed[s].assign(gt_global[s].size(), 0);
  for (const auto& r : ranked) {
    const auto& candidates = gt_global[r.slot];
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t j = 0; j < candidates.size(); ++j) {
      if (consumed[r.slot][j]) continue;
      const double iou = mask_iou(preds[r.index].mask, gts[candidates[j]].mask);
      if (iou > best_iou) {
        best = static_cast<int>(j);
        best_iou = iou;
      }
    }
    MatchResult::Entry entry;
    entry.pred_index = r.index;
    if (best >= 0 && best_iou >= threshold) {
      entry.tp = true;
      entry.gt_index = static_cast<std::ptrdiff_t>(candidates[best]);
      consumed[r.slot][best] = 1;
    }
    result.ranked.push_back(entry);
  }
  return result;
}

double average_precision(const MatchResult& result) {
  std::vector<char> tp;
  tp.reserve(result.ranked.size());
  for (const auto& e : result.ranked) tp.push_back(e.tp ? 1 : 0);
  return ap_from_flags(tp, result.n_gt);
}

// ---- volume metrics over flat unit lists ----

namespace {

struct GroupedShapes {
  std::vector<std::vector<UnitShape>> gts, preds;
};

UnitShape shape_of(const EvalUnit& u) {
  UnitShape s;
  s.class_id = u.class_id;
  s.attribute_id = u.attribute_id;
  s.instance_id = u.instance_id;
  s.rle = rle_encode(u.mask);
  s.area = u.mask.area();
  s.bbox = u.mask.bbox();
  s.score = u.score;
  s.ingest = u.ingest_order;
  return s;
}

GroupedShapes group_units(std::span<const EvalUnit> gt_units,
                          std::span<const EvalUnit> pred_units, int n_classes,
                          bool discard_empty_preds) {
  GroupedShapes grouped;
  std::unordered_map<std::string, int> slot;
  auto slot_of = [&](const std::string& id) {
    auto [it, inserted] = slot.try_emplace(id, static_cast<int>(grouped.gts.size()));
    if (inserted) {
      grouped.gts.emplace_back();
      grouped.preds.emplace_back();
    }
    return it->second;
  };
  for (const auto& u : gt_units) {
    if (u.class_id < 1 || u.class_id > n_classes) {
      throw ClassOutOfRange("volume metric: ground-truth unit class outside catalog");
    }
    if (u.mask.area() == 0) throw SchemaError("volume metric: ground-truth unit with empty mask");
    grouped.gts[slot_of(u.image_id)].push_back(shape_of(u));
  }
  for (const auto& u : pred_units) {
    if (u.class_id < 1 || u.class_id > n_classes) {
      throw ClassOutOfRange("volume metric: prediction unit class outside catalog");
    }
    if (u.mask.area() == 0 && discard_empty_preds) continue;
    grouped.preds[slot_of(u.image_id)].push_back(shape_of(u));
  }
  return grouped;
}

ApReport ap_over_units(ApMetric metric, Task task, std::span<const EvalUnit> gt_units,
                       std::span<const EvalUnit> pred_units, std::span<const double> thresholds,
                       int n_classes, const ApConfig& config) {
  if (n_classes < 1) throw ConfigError("volume metric: class count must be positive");
  auto grouped = group_units(gt_units, pred_units, n_classes, config.discard_empty_pred_units);
  std::vector<ImageMatchTable> tables;
  tables.reserve(grouped.gts.size());
  for (std::size_t i = 0; i < grouped.gts.size(); ++i) {
    tables.push_back(build_match_table(grouped.gts[i], grouped.preds[i]));
  }
  std::vector<int> class_ids(n_classes);
  for (int c = 0; c < n_classes; ++c) class_ids[c] = c + 1;
  return ap_from_tables(metric, task, tables, class_ids, thresholds, config);
}

}  // namespace

ApReport ap_r_vol(std::span<const EvalUnit> gt_units, std::span<const EvalUnit> pred_units,
                  std::span<const double> thresholds, int n_classes, const ApConfig& config) {
  return ap_over_units(ApMetric::ap_r, Task::attribute, gt_units, pred_units, thresholds,
                       n_classes, config);
}

ApReport ap_cr_vol(std::span<const EvalUnit> gt_units, std::span<const EvalUnit> pred_units,
                   std::span<const double> thresholds, Task task, int n_classes,
                   const ApConfig& config) {
  require_characteristic(task);
  return ap_over_units(ApMetric::ap_cr, task, gt_units, pred_units, thresholds, n_classes,
                       config);
}

ApReport ap_p_vol(std::span<const PersonUnit> gt_persons,
                  std::span<const PersonUnit> pred_persons, std::span<const double> thresholds,
                  const ApConfig& config) {
  std::unordered_map<std::string, int> slot;
  std::vector<std::vector<const PersonUnit*>> gts, preds;
  auto slot_of = [&](const std::string& id) {
    auto [it, inserted] = slot.try_emplace(id, static_cast<int>(gts.size()));
    if (inserted) {
      gts.emplace_back();
      preds.emplace_back();
    }
    return it->second;
  };
  for (const auto& g : gt_persons) gts[slot_of(g.image_id)].push_back(&g);
  for (const auto& p : pred_persons) {
    if (p.area == 0 && config.discard_empty_pred_units) continue;
    preds[slot_of(p.image_id)].push_back(&p);
  }
  std::vector<ImageMatchTable> tables;
  tables.reserve(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i) {
    std::vector<PersonUnit> g, p;
    g.reserve(gts[i].size());
    p.reserve(preds[i].size());
    for (const auto* u : gts[i]) g.push_back(*u);
    for (const auto* u : preds[i]) p.push_back(*u);
    tables.push_back(build_person_table(g, p));
  }
  const int person_class[] = {0};
  return ap_from_tables(ApMetric::ap_p, Task::instance, tables, person_class, thresholds,
                        config);
}

}  // namespace ccihp
