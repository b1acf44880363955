#include "ccihp/naive_eval.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <unordered_map>

namespace ccihp::naive {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

bool has_metric(const EvalConfig& config, Metric m) {
  for (Metric x : config.metrics) {
    if (x == m) return true;
  }
  return false;
}

// Dense pixel membership plus the bookkeeping matching needs.
struct DenseUnit {
  int cls = 0;
  std::vector<char> pixels;  // one flag per raster cell
  double score = 0.0;
  std::int64_t ingest = 0;  // within-image load sequence
};

struct DensePerson {
  std::vector<char> pixels;
  std::map<int, std::vector<char>> parts;  // attribute class -> membership
  double score = 0.0;
  std::int64_t ingest = 0;
};

struct ImageUnits {
  std::vector<DenseUnit> gt_region, pred_region;
  std::array<std::vector<DenseUnit>, 4> gt_char, pred_char;
  std::vector<DensePerson> gt_people, pred_people;
};

double dense_iou(const std::vector<char>& a, const std::vector<char>& b) {
  std::int64_t inter = 0, uni = 0;
  for (std::size_t q = 0; q < a.size(); ++q) {
    inter += a[q] && b[q];
    uni += a[q] || b[q];
  }
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

// Mean part IoU over the attribute classes present on either side.
double dense_person_score(const DensePerson& pred, const DensePerson& gt) {
  double sum = 0.0;
  int n = 0;
  auto pi = pred.parts.begin();
  auto gi = gt.parts.begin();
  while (pi != pred.parts.end() || gi != gt.parts.end()) {
    if (gi == gt.parts.end() || (pi != pred.parts.end() && pi->first < gi->first)) {
      ++n;
      ++pi;
    } else if (pi == pred.parts.end() || gi->first < pi->first) {
      ++n;
      ++gi;
    } else {
      sum += dense_iou(pi->second, gi->second);
      ++n;
      ++pi;
      ++gi;
    }
  }
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

// Key -> slot lookup that remembers the order keys first appeared in.
struct UnitIndex {
  std::unordered_map<std::int64_t, std::size_t> slots;
  std::size_t at(std::int64_t key, std::vector<DenseUnit>& units, int cls, std::int64_t hw) {
    auto [it, inserted] = slots.try_emplace(key, units.size());
    if (inserted) {
      DenseUnit u;
      u.cls = cls;
      u.pixels.assign(static_cast<std::size_t>(hw), 0);
      u.ingest = static_cast<std::int64_t>(units.size());
      units.push_back(std::move(u));
    }
    return it->second;
  }
};

std::vector<char> decode_dense(const RleMask& rle) {
  std::vector<char> out(static_cast<std::size_t>(rle.height) * rle.width, 0);
  std::size_t pos = 0;
  bool fg = false;
  for (std::int64_t c : rle.counts) {
    if (fg) std::fill(out.begin() + pos, out.begin() + pos + c, 1);
    pos += static_cast<std::size_t>(c);
    fg = !fg;
  }
  return out;
}

ImageUnits collect_units(const ImageSample& gt, const ImagePrediction* pred,
                         const Taxonomy& taxonomy, const EvalConfig& config, bool want_region,
                         bool want_char, bool want_people) {
  ImageUnits out;
  const int h = gt.attribute.height(), w = gt.attribute.width();
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  const std::int32_t* ga = gt.attribute.grid().data();
  const std::int32_t* gi = gt.instance.grid().data();
  const int attr_count = taxonomy.class_count(Task::attribute);
  std::vector<char> is_char(attr_count + 1, 0);
  for (int a = 1; a <= attr_count; ++a) is_char[a] = taxonomy.is_characterizable(a);
  const bool per_attr = config.granularity == UnitGranularity::per_attribute_region;

  if (want_region) {
    UnitIndex index;
    for (std::int64_t q = 0; q < hw; ++q) {
      if (gi[q] > 0 && ga[q] > 0) {
        const std::int64_t key = (static_cast<std::int64_t>(gi[q]) << 32) | ga[q];
        out.gt_region[index.at(key, out.gt_region, ga[q], hw)].pixels[q] = 1;
      }
    }
  }
  if (want_char) {
    for (Task t : kCharacteristicTasks) {
      const std::int32_t* gk = gt.map(t).grid().data();
      UnitIndex index;
      auto& units = out.gt_char[static_cast<int>(t)];
      for (std::int64_t q = 0; q < hw; ++q) {
        const std::int32_t a = ga[q];
        if (gi[q] <= 0 || a <= 0 || !is_char[a] || gk[q] <= 0) continue;
        const std::int64_t key = per_attr
            ? (static_cast<std::int64_t>(gi[q]) << 32) | (static_cast<std::int64_t>(a) << 16) |
                gk[q]
            : (static_cast<std::int64_t>(gi[q]) << 32) | gk[q];
        units[index.at(key, units, gk[q], hw)].pixels[q] = 1;
      }
    }
  }
  if (want_people) {
    std::unordered_map<int, std::size_t> slot;
    for (std::int64_t q = 0; q < hw; ++q) {
      if (gi[q] <= 0) continue;
      auto [it, inserted] = slot.try_emplace(gi[q], out.gt_people.size());
      if (inserted) {
        DensePerson person;
        person.pixels.assign(static_cast<std::size_t>(hw), 0);
        person.ingest = static_cast<std::int64_t>(out.gt_people.size());
        out.gt_people.push_back(std::move(person));
      }
      DensePerson& person = out.gt_people[it->second];
      person.pixels[q] = 1;
      if (ga[q] > 0) {
        auto [part, fresh] = person.parts.try_emplace(ga[q]);
        if (fresh) part->second.assign(static_cast<std::size_t>(hw), 0);
        part->second[q] = 1;
      }
    }
  }

  if (pred == nullptr) return out;
  const std::int32_t* pa = pred->semantic[static_cast<int>(Task::attribute)].grid().data();

  std::vector<std::vector<char>> masks;
  masks.reserve(pred->instances.size());
  for (const auto& inst : pred->instances) masks.push_back(decode_dense(inst.mask));

  if (want_region) {
    UnitIndex index;
    for (std::size_t m = 0; m < masks.size(); ++m) {
      for (std::int64_t q = 0; q < hw; ++q) {
        if (!masks[m][q] || pa[q] <= 0) continue;
        const std::int64_t key = (static_cast<std::int64_t>(m) << 32) | pa[q];
        const std::size_t s = index.at(key, out.pred_region, pa[q], hw);
        out.pred_region[s].pixels[q] = 1;
        out.pred_region[s].score = pred->instances[m].score;
      }
    }
  }
  if (want_char) {
    for (Task t : kCharacteristicTasks) {
      const std::int32_t* pk = pred->semantic[static_cast<int>(t)].grid().data();
      UnitIndex index;
      auto& units = out.pred_char[static_cast<int>(t)];
      for (std::size_t m = 0; m < masks.size(); ++m) {
        for (std::int64_t q = 0; q < hw; ++q) {
          const std::int32_t a = pa[q];
          if (!masks[m][q] || a <= 0 || !is_char[a] || pk[q] <= 0) continue;
          const std::int64_t key = per_attr
              ? (static_cast<std::int64_t>(m) << 32) | (static_cast<std::int64_t>(a) << 16) |
                  pk[q]
              : (static_cast<std::int64_t>(m) << 32) | pk[q];
          const std::size_t s = index.at(key, units, pk[q], hw);
          units[s].pixels[q] = 1;
          units[s].score = pred->instances[m].score;
        }
      }
    }
  }
  if (want_people) {
    for (std::size_t m = 0; m < masks.size(); ++m) {
      std::int64_t area = 0;
      for (std::int64_t q = 0; q < hw; ++q) area += masks[m][q];
      if (area == 0 && config.ap.discard_empty_pred_units) continue;
      DensePerson person;
      person.pixels = masks[m];
      person.score = pred->instances[m].score;
      person.ingest = static_cast<std::int64_t>(m);
      for (std::int64_t q = 0; q < hw; ++q) {
        if (!masks[m][q] || pa[q] <= 0) continue;
        auto [part, fresh] = person.parts.try_emplace(pa[q]);
        if (fresh) part->second.assign(static_cast<std::size_t>(hw), 0);
        part->second[q] = 1;
      }
      out.pred_people.push_back(std::move(person));
    }
  }
  return out;
}

// One pooled prediction: similarities against its own image's ground-truth
// list were precomputed, so thresholds reuse them.
struct Pooled {
  double score = 0.0;
  std::int64_t ingest = 0;  // image-major global sequence
  int image = 0;
  std::vector<double> sims;
};

ApClass score_class(std::vector<Pooled>& pooled, const std::vector<int>& gt_counts,
                    std::int64_t n_gt, const std::vector<double>& thresholds) {
  std::sort(pooled.begin(), pooled.end(), [](const Pooled& a, const Pooled& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.ingest < b.ingest;
  });
  ApClass result;
  result.n_gt = n_gt;
  std::vector<std::vector<char>> consumed(gt_counts.size());
  for (double threshold : thresholds) {
    for (std::size_t i = 0; i < gt_counts.size(); ++i) {
      consumed[i].assign(static_cast<std::size_t>(gt_counts[i]), 0);
    }
    std::vector<char> tp(pooled.size(), 0);
    for (std::size_t k = 0; k < pooled.size(); ++k) {
      auto& used = consumed[static_cast<std::size_t>(pooled[k].image)];
      int best = -1;
      double best_sim = -1.0;
      for (std::size_t j = 0; j < pooled[k].sims.size(); ++j) {
        if (!used[j] && pooled[k].sims[j] > best_sim) {
          best = static_cast<int>(j);
          best_sim = pooled[k].sims[j];
        }
      }
      if (best >= 0 && best_sim >= threshold) {
        tp[k] = 1;
        used[static_cast<std::size_t>(best)] = 1;
      }
    }
    // precision at every rank, envelope from the tail, one recall step per TP
    std::vector<double> precision(pooled.size());
    std::int64_t hits = 0;
    for (std::size_t k = 0; k < pooled.size(); ++k) {
      hits += tp[k];
      precision[k] = static_cast<double>(hits) / static_cast<double>(k + 1);
    }
    for (std::size_t k = pooled.size(); k-- > 1;) {
      if (precision[k] > precision[k - 1]) precision[k - 1] = precision[k];
    }
    double ap = 0.0;
    for (std::size_t k = 0; k < pooled.size(); ++k) {
      if (tp[k]) ap += precision[k];
    }
    result.per_threshold.push_back(ap / static_cast<double>(n_gt));
  }
  double sum = 0.0;
  for (double v : result.per_threshold) sum += v;
  result.volume = sum / static_cast<double>(result.per_threshold.size());
  return result;
}

int unit_class(const DenseUnit& u) { return u.cls; }
int unit_class(const DensePerson&) { return 0; }

// units_of(i) -> (gt list, pred list) for image i; sim(pred, gt) scores a pair.
template <typename Unit, typename Sim>
ApResult ap_metric(std::size_t images,
                   const std::function<const std::vector<Unit>*(std::size_t, bool)>& units_of,
                   const std::vector<int>& class_ids, const std::vector<double>& thresholds,
                   const Sim& sim) {
  ApResult result;
  for (int cls : class_ids) {
    // gather this class's ground truth and predictions, image by image
    std::vector<std::vector<const Unit*>> gts(images);
    std::int64_t n_gt = 0;
    for (std::size_t i = 0; i < images; ++i) {
      for (const Unit& u : *units_of(i, true)) {
        if (unit_class(u) == cls) gts[i].push_back(&u);
      }
      n_gt += static_cast<std::int64_t>(gts[i].size());
    }
    if (n_gt == 0) {
      result.undefined_classes.push_back(cls);
      continue;
    }
    std::vector<Pooled> pooled;
    std::vector<int> gt_counts(images);
    for (std::size_t i = 0; i < images; ++i) {
      gt_counts[i] = static_cast<int>(gts[i].size());
      for (const Unit& u : *units_of(i, false)) {
        if (unit_class(u) != cls) continue;
        Pooled p;
        p.score = u.score;
        p.ingest = (static_cast<std::int64_t>(i) << 24) + u.ingest;
        p.image = static_cast<int>(i);
        p.sims.reserve(gts[i].size());
        for (const Unit* g : gts[i]) p.sims.push_back(sim(u, *g));
        pooled.push_back(std::move(p));
      }
    }
    result.per_class.emplace(cls, score_class(pooled, gt_counts, n_gt, thresholds));
  }
  if (result.per_class.empty()) {
    result.overall = kNan;
  } else {
    double sum = 0.0;
    for (const auto& [cls, r] : result.per_class) sum += r.volume;
    result.overall = sum / static_cast<double>(result.per_class.size());
  }
  return result;
}

}  // namespace

Report evaluate(const std::vector<EvalPair>& pairs, const Taxonomy& taxonomy,
                const EvalConfig& config) {
  const std::vector<double> thresholds = [&] {
    if (!config.thresholds.empty()) return config.thresholds;
    std::vector<double> t;
    for (int i = 1; i <= 9; ++i) t.push_back(i / 10.0);
    return t;
  }();
  const bool want_miou = has_metric(config, Metric::miou);
  const bool want_region = has_metric(config, Metric::ap_r);
  const bool want_char = has_metric(config, Metric::ap_cr);
  const bool want_people = has_metric(config, Metric::ap_p);

  Report report;

  if (want_miou) {
    for (Task t : config.tasks) {
      const int n = taxonomy.class_count(t) + 1;
      std::vector<std::int64_t> counts(static_cast<std::size_t>(n) * n, 0);
      for (const EvalPair& pair : pairs) {
        const std::int32_t* g = pair.gt.map(t).grid().data();
        const std::int64_t hw =
            static_cast<std::int64_t>(pair.gt.map(t).height()) * pair.gt.map(t).width();
        if (pair.pred) {
          const std::int32_t* p = pair.pred->semantic[static_cast<int>(t)].grid().data();
          for (std::int64_t q = 0; q < hw; ++q) {
            counts[static_cast<std::size_t>(g[q]) * n + p[q]] += 1;
          }
        } else {
          for (std::int64_t q = 0; q < hw; ++q) {
            counts[static_cast<std::size_t>(g[q]) * n] += 1;  // predicted background
          }
        }
      }
      std::vector<double> iou(n, kNan);
      for (int c = 0; c < n; ++c) {
        std::int64_t tp = counts[static_cast<std::size_t>(c) * n + c];
        std::int64_t row = 0, col = 0;
        for (int k = 0; k < n; ++k) {
          row += counts[static_cast<std::size_t>(c) * n + k];
          col += counts[static_cast<std::size_t>(k) * n + c];
        }
        const std::int64_t uni = row + col - tp;
        if (uni > 0) iou[c] = static_cast<double>(tp) / static_cast<double>(uni);
      }
      auto mean_over = [&](int first) {
        double sum = 0.0;
        int defined = 0;
        for (int c = first; c < n; ++c) {
          if (!std::isnan(iou[c])) {
            sum += iou[c];
            ++defined;
          }
        }
        return defined > 0 ? sum / defined : kNan;
      };
      report.mean_foreground[t] = mean_over(1);
      report.mean_with_background[t] = mean_over(0);
      report.iou_per_class[t] = std::move(iou);
    }
  }

  if (!(want_region || want_char || want_people)) return report;

  std::vector<ImageUnits> images;
  images.reserve(pairs.size());
  for (const EvalPair& pair : pairs) {
    images.push_back(collect_units(pair.gt, pair.pred ? &*pair.pred : nullptr, taxonomy,
                                   config, want_region, want_char, want_people));
  }

  auto class_range = [](int n) {
    std::vector<int> ids;
    for (int c = 1; c <= n; ++c) ids.push_back(c);
    return ids;
  };
  const auto iou_sim = [](const DenseUnit& a, const DenseUnit& b) {
    return dense_iou(a.pixels, b.pixels);
  };

  if (want_region) {
    std::function<const std::vector<DenseUnit>*(std::size_t, bool)> units =
        [&](std::size_t i, bool gt) {
          return gt ? &images[i].gt_region : &images[i].pred_region;
        };
    report.ap_r = ap_metric<DenseUnit>(images.size(), units,
                                       class_range(taxonomy.class_count(Task::attribute)),
                                       thresholds, iou_sim);
  }
  if (want_char) {
    for (Task t : kCharacteristicTasks) {
      std::function<const std::vector<DenseUnit>*(std::size_t, bool)> units =
          [&, t](std::size_t i, bool gt) {
            return gt ? &images[i].gt_char[static_cast<int>(t)]
                      : &images[i].pred_char[static_cast<int>(t)];
          };
      report.ap_cr.emplace(t, ap_metric<DenseUnit>(images.size(), units,
                                                   class_range(taxonomy.class_count(t)),
                                                   thresholds, iou_sim));
    }
  }
  if (want_people) {
    std::function<const std::vector<DensePerson>*(std::size_t, bool)> units =
        [&](std::size_t i, bool gt) {
          return gt ? &images[i].gt_people : &images[i].pred_people;
        };
    const std::vector<int> person_class = {0};
    report.ap_p = ap_metric<DensePerson>(
        images.size(), units, person_class, thresholds,
        [](const DensePerson& a, const DensePerson& b) { return dense_person_score(a, b); });
  }
  return report;
}

}  // namespace ccihp::naive
