#include "ccihp/report.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace ccihp {

namespace {

nlohmann::ordered_json number_or_null(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v * 100.0);
  return buf;
}

const char* task_key(Task task) {
  return task == Task::instance ? "person" : to_string(task);
}

}  // namespace

std::string dump_canonical(const nlohmann::ordered_json& doc) {
  return doc.dump(2) + "\n";
}

nlohmann::ordered_json ap_report_to_json(const ApReport& report, const Taxonomy& taxonomy) {
  nlohmann::ordered_json doc;
  doc["metric"] = to_string(report.metric);
  doc["task"] = task_key(report.task);
  doc["thresholds"] = report.thresholds;
  nlohmann::ordered_json per_class;
  auto class_label = [&](int cls) {
    return report.task == Task::instance ? std::string("person")
                                         : taxonomy.class_name(report.task, cls);
  };
  // defined and undefined classes interleaved in class-id order
  auto defined = report.per_class.begin();
  auto undefined = report.undefined_classes.begin();
  while (defined != report.per_class.end() || undefined != report.undefined_classes.end()) {
    if (undefined == report.undefined_classes.end() ||
        (defined != report.per_class.end() && defined->first < *undefined)) {
      nlohmann::ordered_json entry;
      entry["per_threshold"] = defined->second.per_threshold;
      entry["volume"] = defined->second.volume;
      entry["n_gt"] = defined->second.n_gt;
      per_class[class_label(defined->first)] = std::move(entry);
      ++defined;
    } else {
      per_class[class_label(*undefined)] = nullptr;
      ++undefined;
    }
  }
  doc["per_class"] = std::move(per_class);
  doc["overall"] = number_or_null(report.overall);
  doc["config"] = {{"tie_break", report.config.tie_break},
                   {"integration", report.config.integration},
                   {"discard_empty_pred_units", report.config.discard_empty_pred_units}};
  return doc;
}

nlohmann::ordered_json report_to_json(const EvalReport& report, const Taxonomy& taxonomy,
                                      const EvalConfig& config) {
  nlohmann::ordered_json doc;
  doc["schema"] = "ccihp-eval/report/v1";

  nlohmann::ordered_json cfg;
  {
    nlohmann::ordered_json tasks = nlohmann::ordered_json::array();
    for (Task t : config.tasks) tasks.push_back(to_string(t));
    cfg["tasks"] = std::move(tasks);
    nlohmann::ordered_json metrics = nlohmann::ordered_json::array();
    for (Metric m : config.metrics) metrics.push_back(to_string(m));
    cfg["metrics"] = std::move(metrics);
    cfg["mean_policy"] = to_string(config.mean_policy);
    cfg["unit_granularity"] = to_string(config.granularity);
    cfg["thresholds"] =
        config.thresholds.empty() ? default_ap_thresholds() : config.thresholds;
    cfg["tie_break"] = config.ap.tie_break;
    cfg["integration"] = config.ap.integration;
    cfg["discard_empty_pred_units"] = config.ap.discard_empty_pred_units;
    cfg["engine"] = to_string(config.engine);
    cfg["require_complete"] = config.require_complete;
  }
  doc["config"] = std::move(cfg);

  nlohmann::ordered_json semantic;
  for (const auto& [task, cm] : report.semantic) {
    nlohmann::ordered_json block;
    const Eigen::ArrayXd iou = iou_per_class(cm);
    nlohmann::ordered_json per_class;
    for (int c = 1; c < cm.n(); ++c) {
      per_class[taxonomy.class_name(task, c)] = number_or_null(iou[c]);
    }
    block["per_class"] = std::move(per_class);
    for (MeanPolicy policy : {MeanPolicy::foreground_only, MeanPolicy::with_background}) {
      const char* key = policy == MeanPolicy::foreground_only ? "mean_foreground"
                                                              : "mean_with_background";
      try {
        block[key] = mean_iou(cm, policy).mean;
      } catch (const AllUndefined&) {
        block[key] = nullptr;
      }
    }
    semantic[to_string(task)] = std::move(block);
  }
  doc["semantic"] = std::move(semantic);

  nlohmann::ordered_json instance;
  if (report.ap_r) instance["ap_r_vol"] = ap_report_to_json(*report.ap_r, taxonomy);
  if (report.ap_p) instance["ap_p_vol"] = ap_report_to_json(*report.ap_p, taxonomy);
  if (!report.ap_cr.empty()) {
    nlohmann::ordered_json by_task;
    for (const auto& [task, ap] : report.ap_cr) {
      by_task[to_string(task)] = ap_report_to_json(ap, taxonomy);
    }
    instance["ap_cr_vol"] = std::move(by_task);
  }
  doc["instance"] = std::move(instance);

  nlohmann::ordered_json meta;
  meta["images"] = report.metadata.images;
  meta["missing_predictions"] = report.metadata.missing_predictions;
  meta["discarded_empty_prediction_masks"] = report.metadata.discarded_empty_prediction_masks;
  doc["metadata"] = std::move(meta);
  return doc;
}

nlohmann::ordered_json stats_to_json(const StatsReport& stats, const Taxonomy& taxonomy) {
  nlohmann::ordered_json doc;
  doc["schema"] = "ccihp-eval/stats/v1";
  doc["images"] = stats.images;
  nlohmann::ordered_json splits;
  for (const auto& [name, n] : stats.per_split) splits[name] = n;
  doc["per_split"] = std::move(splits);
  doc["instances_total"] = stats.instances_total;
  doc["people_mean"] = stats.people_mean();
  nlohmann::ordered_json histogram;
  for (const auto& [people, n] : stats.people_histogram) {
    histogram[std::to_string(people)] = n;
  }
  doc["people_histogram"] = std::move(histogram);
  nlohmann::ordered_json tasks;
  for (Task t : kSemanticTasks) {
    nlohmann::ordered_json block;
    const auto& images = stats.images_per_label[static_cast<int>(t)];
    const auto& pixels = stats.pixels_per_class[static_cast<int>(t)];
    for (const auto& [cls, n_pixels] : pixels) {
      nlohmann::ordered_json entry;
      const auto it = images.find(cls);
      entry["images"] = it != images.end() ? it->second : 0;
      entry["pixels"] = n_pixels;
      block[taxonomy.class_name(t, cls)] = std::move(entry);
    }
    tasks[to_string(t)] = std::move(block);
  }
  doc["tasks"] = std::move(tasks);
  doc["errors"] = stats.errors;
  return doc;
}

nlohmann::ordered_json validation_to_json(const ValidationReport& report) {
  nlohmann::ordered_json doc;
  doc["schema"] = "ccihp-eval/validation/v1";
  doc["images_checked"] = report.images_checked;
  doc["errors"] = report.error_count();
  doc["warnings"] = report.warning_count();
  nlohmann::ordered_json images = nlohmann::ordered_json::array();
  for (const auto& img : report.images) {
    nlohmann::ordered_json entry;
    entry["image_id"] = img.image_id;
    nlohmann::ordered_json violations = nlohmann::ordered_json::array();
    for (const auto& v : img.violations) {
      violations.push_back({{"code", v.code},
                            {"severity", to_string(v.severity)},
                            {"detail", v.detail},
                            {"pixels", v.pixels}});
    }
    entry["violations"] = std::move(violations);
    images.push_back(std::move(entry));
  }
  doc["images"] = std::move(images);
  return doc;
}

// ---- fixed-width table ----

namespace {

struct TableBlock {
  std::string title;
  std::vector<std::string> columns;            // "all" first
  std::vector<std::string> row_labels;
  std::vector<std::vector<std::string>> rows;  // cells per row, aligned to columns
};

std::string render_block(const TableBlock& block) {
  std::size_t label_width = 0;
  for (const auto& label : block.row_labels) label_width = std::max(label_width, label.size());
  std::vector<std::size_t> widths(block.columns.size());
  for (std::size_t c = 0; c < block.columns.size(); ++c) {
    widths[c] = block.columns[c].size();
    for (const auto& row : block.rows) widths[c] = std::max(widths[c], row[c].size());
  }
  std::ostringstream out;
  out << "== " << block.title << " ==\n";
  out << std::string(label_width, ' ');
  for (std::size_t c = 0; c < block.columns.size(); ++c) {
    out << " | " << std::string(widths[c] - block.columns[c].size(), ' ') << block.columns[c];
  }
  out << "\n";
  for (std::size_t r = 0; r < block.rows.size(); ++r) {
    const std::string& label = block.row_labels[r];
    out << label << std::string(label_width - label.size(), ' ');
    for (std::size_t c = 0; c < block.columns.size(); ++c) {
      out << " | " << std::string(widths[c] - block.rows[r][c].size(), ' ')
          << block.rows[r][c];
    }
    out << "\n";
  }
  return out.str();
}

std::string cell(double v) { return std::isfinite(v) ? percent(v) : "-"; }

std::vector<std::string> ap_row(const ApReport& ap, int n_classes) {
  std::vector<std::string> row;
  row.push_back(cell(ap.overall));
  for (int c = 1; c <= n_classes; ++c) {
    const auto it = ap.per_class.find(c);
    row.push_back(it != ap.per_class.end() ? cell(it->second.volume) : "-");
  }
  return row;
}

}  // namespace

std::string render_table(const EvalReport& report, const Taxonomy& taxonomy,
                         MeanPolicy policy) {
  std::ostringstream out;
  bool first = true;
  for (Task t : kSemanticTasks) {
    const auto cm = report.semantic.find(t);
    const ApReport* ap = nullptr;
    if (t == Task::attribute && report.ap_r) ap = &*report.ap_r;
    const auto cr = report.ap_cr.find(t);
    if (cr != report.ap_cr.end()) ap = &cr->second;
    if (cm == report.semantic.end() && ap == nullptr) continue;

    TableBlock block;
    block.title = to_string(t);
    block.columns.push_back("all");
    const int n = taxonomy.class_count(t);
    for (int c = 1; c <= n; ++c) {
      block.columns.push_back(display_name(taxonomy.class_name(t, c)));
    }
    if (cm != report.semantic.end()) {
      block.row_labels.push_back(std::string("mIoU[") + to_string(policy) + "]");
      std::vector<std::string> row;
      try {
        row.push_back(cell(mean_iou(cm->second, policy).mean));
      } catch (const AllUndefined&) {
        row.push_back("-");
      }
      const Eigen::ArrayXd iou = iou_per_class(cm->second);
      for (int c = 1; c <= n; ++c) row.push_back(cell(iou[c]));
      block.rows.push_back(std::move(row));
    }
    if (ap != nullptr) {
      block.row_labels.push_back(table_label(ap->metric));
      block.rows.push_back(ap_row(*ap, n));
    }
    if (!first) out << "\n";
    first = false;
    out << render_block(block);
  }
  if (report.ap_p) {
    TableBlock block;
    block.title = "person";
    block.columns = {"all"};
    block.row_labels.push_back(table_label(ApMetric::ap_p));
    block.rows.push_back({cell(report.ap_p->overall)});
    if (!first) out << "\n";
    out << render_block(block);
  }
  return out.str();
}

}  // namespace ccihp
