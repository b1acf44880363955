#include "ccihp/eval_runner.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>

#include "ccihp/parallel.hpp"

namespace ccihp {

namespace fs = std::filesystem;

const char* to_string(Metric metric) {
  switch (metric) {
    case Metric::miou: return "miou";
    case Metric::ap_r: return "apr";
    case Metric::ap_p: return "app";
    case Metric::ap_cr: return "apcr";
  }
  return "?";
}

Metric metric_from_string(const std::string& name) {
  if (name == "miou") return Metric::miou;
  if (name == "apr") return Metric::ap_r;
  if (name == "app") return Metric::ap_p;
  if (name == "apcr") return Metric::ap_cr;
  throw ConfigError("unknown metric '" + name + "' (expected miou, apr, app, apcr)");
}

const char* to_string(EngineKind engine) {
  return engine == EngineKind::reference ? "main" : "naive";
}

EngineKind engine_from_string(const std::string& name) {
  if (name == "main") return EngineKind::reference;
  if (name == "naive") return EngineKind::naive;
  throw ConfigError("unknown engine '" + name + "' (expected main, naive)");
}

namespace {

bool wants(const EvalConfig& config, Metric m) {
  return std::find(config.metrics.begin(), config.metrics.end(), m) != config.metrics.end();
}

// Per-image results; merged serially in image order so the fold is
// independent of worker scheduling.
struct ImageSlot {
  std::vector<ConfusionMatrix> cms;  // parallel to the validated task list
  ImageMatchTable region;
  std::array<ImageMatchTable, 4> characterized;  // indexed by Task
  ImageMatchTable person;
  bool missing_pred = false;
  std::string image_id;
  std::int64_t empty_pred_masks = 0;
};

// Pooled score ties break on a global load order: image-major, then the
// unit's within-image ingest. Local ingests stay below 2^24.
void globalize_ingest(ImageMatchTable& table, std::size_t image_index) {
  const std::int64_t base = static_cast<std::int64_t>(image_index) << 24;
  for (auto& p : table.preds) p.ingest += base;
}

EvalReport run_pipeline(std::size_t count,
                        const std::function<EvalPair(std::size_t)>& load,
                        const Taxonomy& taxonomy, const EvalConfig& config) {
  const std::vector<double> thresholds =
      config.thresholds.empty() ? default_ap_thresholds() : config.thresholds;
  std::vector<Task> miou_tasks;
  for (Task t : config.tasks) {
    if (t == Task::instance) {
      throw ConfigError("miou: the instance task has no class catalog to score");
    }
    if (std::find(miou_tasks.begin(), miou_tasks.end(), t) == miou_tasks.end()) {
      miou_tasks.push_back(t);
    }
  }
  const bool want_miou = wants(config, Metric::miou);
  const bool want_apr = wants(config, Metric::ap_r);
  const bool want_app = wants(config, Metric::ap_p);
  const bool want_apcr = wants(config, Metric::ap_cr);

  std::vector<ImageSlot> slots(count);
  parallel_for(count, config.workers, [&](std::size_t i) {
    EvalPair pair = load(i);
    const ImageSample& gt = pair.gt;
    ImageSlot& slot = slots[i];
    slot.image_id = gt.id;
    slot.missing_pred = !pair.pred.has_value();
    const ImagePrediction pred =
        pair.pred ? std::move(*pair.pred)
                  : empty_prediction(gt.id, gt.attribute.height(), gt.attribute.width(),
                                     taxonomy);

    const std::vector<double> scores = pred.scores();
    const std::vector<RleMask> masks = pred.masks();
    if (config.ap.discard_empty_pred_units) {
      for (const auto& m : masks) slot.empty_pred_masks += m.area() == 0;
    }

    if (want_miou) {
      slot.cms.reserve(miou_tasks.size());
      for (Task t : miou_tasks) {
        slot.cms.push_back(accumulate(gt.map(t), pred.semantic[static_cast<int>(t)],
                                      taxonomy.class_count(t) + 1));
      }
    }
    const LabelMap& pred_attr = pred.semantic[static_cast<int>(Task::attribute)];
    if (want_apr || want_apcr || want_app) {
      const UnitFamilies families{want_apr, want_apcr, want_app};
      std::array<const LabelMap*, 3> gt_chars = {nullptr, nullptr, nullptr};
      std::array<const LabelMap*, 3> pred_chars = {nullptr, nullptr, nullptr};
      if (want_apcr) {
        for (std::size_t t = 0; t < kCharacteristicTasks.size(); ++t) {
          gt_chars[t] = &gt.map(kCharacteristicTasks[t]);
          pred_chars[t] = &pred.semantic[static_cast<int>(kCharacteristicTasks[t])];
        }
      }
      auto g = extract_unit_bundle(gt.instance, gt.attribute, gt_chars, taxonomy,
                                   config.granularity, families, gt.id);
      auto p = extract_unit_bundle(masks, scores, pred_attr, pred_chars, taxonomy,
                                   config.granularity, families, gt.id);
      if (want_apr) slot.region = build_match_table(g.region, p.region);
      if (want_apcr) {
        for (std::size_t t = 0; t < kCharacteristicTasks.size(); ++t) {
          slot.characterized[static_cast<int>(kCharacteristicTasks[t])] =
              build_match_table(g.characterized[t], p.characterized[t]);
        }
      }
      if (want_app) {
        for (auto& person : p.persons) person.ingest = person.instance_id - 1;
        slot.person = build_person_table(g.persons, p.persons);
        if (!config.ap.discard_empty_pred_units) {
          // kept empty masks stay in the ranking as never-matching persons
          // (an empty sims range: they overlap nothing)
          for (std::size_t m = 0; m < masks.size(); ++m) {
            if (masks[m].area() != 0) continue;
            slot.person.preds.push_back({0, scores[m], static_cast<std::int64_t>(m), 0, 0});
          }
          std::sort(slot.person.preds.begin(), slot.person.preds.end(),
                    [](const auto& a, const auto& b) { return a.ingest < b.ingest; });
        }
      }
    }
  });

  EvalReport report;
  report.metadata.images = static_cast<std::int64_t>(count);
  for (auto& slot : slots) {
    if (slot.missing_pred) report.metadata.missing_predictions.push_back(slot.image_id);
    report.metadata.discarded_empty_prediction_masks += slot.empty_pred_masks;
  }

  if (want_miou) {
    for (std::size_t k = 0; k < miou_tasks.size(); ++k) {
      ConfusionMatrix total(miou_tasks[k], taxonomy.class_count(miou_tasks[k]) + 1);
      for (auto& slot : slots) merge_into(total, slot.cms[k]);
      report.semantic.emplace(miou_tasks[k], std::move(total));
    }
  }

  auto class_range = [](int n) {
    std::vector<int> ids(n);
    for (int c = 1; c <= n; ++c) ids[c - 1] = c;
    return ids;
  };
  if (want_apr) {
    std::vector<ImageMatchTable> tables;
    tables.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      globalize_ingest(slots[i].region, i);
      tables.push_back(std::move(slots[i].region));
    }
    report.ap_r = ap_from_tables(ApMetric::ap_r, Task::attribute, tables,
                                 class_range(taxonomy.class_count(Task::attribute)),
                                 thresholds, config.ap);
  }
  if (want_apcr) {
    for (Task t : kCharacteristicTasks) {
      std::vector<ImageMatchTable> tables;
      tables.reserve(count);
      for (std::size_t i = 0; i < count; ++i) {
        globalize_ingest(slots[i].characterized[static_cast<int>(t)], i);
        tables.push_back(std::move(slots[i].characterized[static_cast<int>(t)]));
      }
      report.ap_cr.emplace(t, ap_from_tables(ApMetric::ap_cr, t, tables,
                                             class_range(taxonomy.class_count(t)), thresholds,
                                             config.ap));
    }
  }
  if (want_app) {
    std::vector<ImageMatchTable> tables;
    tables.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      globalize_ingest(slots[i].person, i);
      tables.push_back(std::move(slots[i].person));
    }
    const std::vector<int> person_class = {0};
    report.ap_p = ap_from_tables(ApMetric::ap_p, Task::instance, tables, person_class,
                                 thresholds, config.ap);
  }
  return report;
}

}  // namespace

EvalReport run_evaluation(std::vector<EvalPair> pairs, const Taxonomy& taxonomy,
                          const EvalConfig& config) {
  return run_pipeline(
      pairs.size(), [&](std::size_t i) { return std::move(pairs[i]); }, taxonomy, config);
}

EvalReport evaluate_files(const EvalConfig& config, const Taxonomy& taxonomy) {
  const DatasetManifest manifest = load_manifest(config.gt_manifest);
  const fs::path pred_dir(config.pred_dir);
  auto load = [&](std::size_t i) {
    EvalPair pair;
    pair.gt = load_sample(manifest, manifest.images[i], taxonomy);
    const fs::path pred_path = pred_dir / (manifest.images[i].id + ".json");
    if (fs::exists(pred_path)) {
      pair.pred = load_prediction(pred_path.string(), taxonomy, pair.gt.attribute.height(),
                                  pair.gt.attribute.width());
    } else if (config.require_complete) {
      throw IoError("missing prediction file: " + pred_path.string());
    }
    return pair;
  };
  return run_pipeline(manifest.images.size(), load, taxonomy, config);
}

std::vector<double> parse_thresholds(const std::string& text) {
  auto parse_value = [](const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw ConfigError("thresholds: trailing characters in '" + s + "'");
      return v;
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("thresholds: cannot parse '" + s + "'");
    }
  };
  const auto c1 = text.find(':');
  if (c1 == std::string::npos) return {parse_value(text)};
  const auto c2 = text.find(':', c1 + 1);
  if (c2 == std::string::npos || text.find(':', c2 + 1) != std::string::npos) {
    throw ConfigError("thresholds: expected lo:hi:step, got '" + text + "'");
  }
  const double lo = parse_value(text.substr(0, c1));
  const double hi = parse_value(text.substr(c1 + 1, c2 - c1 - 1));
  const double step = parse_value(text.substr(c2 + 1));
  if (!(step > 0.0)) throw ConfigError("thresholds: step must be positive");
  if (hi < lo) throw ConfigError("thresholds: range is empty");
  std::vector<double> out;
  for (int k = 0;; ++k) {
    const double v = lo + k * step;
    if (v > hi + 1e-12) break;
    out.push_back(v);
  }
  return out;
}

}  // namespace ccihp
