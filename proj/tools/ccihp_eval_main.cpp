// ccihp_eval: evaluation engine and dataset toolkit for characterized
// instance-level human parsing annotations.
//
//   eval      mIoU / AP volumes of a prediction directory against a manifest
//   stats     dataset statistics (instances, labels, pixels)
//   validate  annotation consistency checks (V1..V6)
//   synth     seeded synthetic dataset + prediction fixtures
//
// Exit codes: 0 success, 1 input/domain error, 2 internal error. validate
// exits 1 when errors were found (or any finding with --strict).

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "ccihp/eval_runner.hpp"
#include "ccihp/naive_eval.hpp"
#include "ccihp/report.hpp"
#include "ccihp/synth.hpp"

namespace fs = std::filesystem;
using namespace ccihp;

namespace {

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) {
    fs::create_directories(parent);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write: " + path);
  out << text;
}

Range parse_range(const std::string& text, const char* what) {
  const auto colon = text.find(':');
  try {
    if (colon == std::string::npos) {
      const int v = std::stoi(text);
      return {v, v};
    }
    return {std::stoi(text.substr(0, colon)), std::stoi(text.substr(colon + 1))};
  } catch (const std::exception&) {
    throw ConfigError(std::string(what) + ": expected lo:hi, got '" + text + "'");
  }
}

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto end = comma == std::string::npos ? text.size() : comma;
    if (end > start) out.push_back(text.substr(start, end - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

struct EvalFlags {
  std::string gt, pred, out, table;
  std::string tasks = "attribute,size,pattern,color";
  std::string metrics = "miou,apr,app,apcr";
  std::string thresholds;
  std::string mean_policy = "foreground_only";
  std::string granularity = "per_attribute_region";
  std::string engine = "main";
  int workers = 1;
  bool require_complete = false;
  bool keep_empty_pred_units = false;
};

EvalConfig make_config(const EvalFlags& flags) {
  EvalConfig config;
  config.gt_manifest = flags.gt;
  config.pred_dir = flags.pred;
  config.tasks.clear();
  for (const auto& name : split_csv(flags.tasks)) config.tasks.push_back(task_from_string(name));
  config.metrics.clear();
  for (const auto& name : split_csv(flags.metrics)) {
    config.metrics.push_back(metric_from_string(name));
  }
  if (!flags.thresholds.empty()) config.thresholds = parse_thresholds(flags.thresholds);
  config.mean_policy = mean_policy_from_string(flags.mean_policy);
  config.granularity = unit_granularity_from_string(flags.granularity);
  config.workers = flags.workers;
  config.engine = engine_from_string(flags.engine);
  config.require_complete = flags.require_complete;
  config.ap.discard_empty_pred_units = !flags.keep_empty_pred_units;
  return config;
}

// Serial pair loading for the oracle engine (it is single-threaded by design).
std::vector<EvalPair> load_pairs(const DatasetManifest& manifest, const Taxonomy& taxonomy,
                                 const EvalConfig& config,
                                 std::vector<std::string>& missing) {
  std::vector<EvalPair> pairs;
  pairs.reserve(manifest.images.size());
  for (const auto& entry : manifest.images) {
    EvalPair pair;
    pair.gt = load_sample(manifest, entry, taxonomy);
    const fs::path path = fs::path(config.pred_dir) / (entry.id + ".json");
    if (fs::exists(path)) {
      pair.pred = load_prediction(path.string(), taxonomy, pair.gt.attribute.height(),
                                  pair.gt.attribute.width());
    } else if (config.require_complete) {
      throw IoError("missing prediction file: " + path.string());
    } else {
      missing.push_back(entry.id);
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

nlohmann::ordered_json naive_ap_to_json(const naive::ApResult& ap, Task task,
                                        const Taxonomy& taxonomy, ApMetric metric,
                                        const std::vector<double>& thresholds,
                                        const ApConfig& config) {
  nlohmann::ordered_json doc;
  doc["metric"] = to_string(metric);
  doc["task"] = task == Task::instance ? "person" : to_string(task);
  doc["thresholds"] = thresholds;
  nlohmann::ordered_json per_class;
  auto label = [&](int cls) {
    return task == Task::instance ? std::string("person") : taxonomy.class_name(task, cls);
  };
  auto defined = ap.per_class.begin();
  auto undefined = ap.undefined_classes.begin();
  while (defined != ap.per_class.end() || undefined != ap.undefined_classes.end()) {
    if (undefined == ap.undefined_classes.end() ||
        (defined != ap.per_class.end() && defined->first < *undefined)) {
      per_class[label(defined->first)] = {{"per_threshold", defined->second.per_threshold},
                                          {"volume", defined->second.volume},
                                          {"n_gt", defined->second.n_gt}};
      ++defined;
    } else {
      per_class[label(*undefined)] = nullptr;
      ++undefined;
    }
  }
  doc["per_class"] = std::move(per_class);
  doc["overall"] = std::isfinite(ap.overall) ? nlohmann::ordered_json(ap.overall) : nullptr;
  doc["config"] = {{"tie_break", config.tie_break},
                   {"integration", config.integration},
                   {"discard_empty_pred_units", config.discard_empty_pred_units}};
  return doc;
}

// Same document layout as report_to_json, filled purely from the oracle's
// own numbers so the two engines' outputs can be diffed file-to-file.
nlohmann::ordered_json naive_report_to_json(const naive::Report& report,
                                            const Taxonomy& taxonomy, const EvalConfig& config,
                                            const EvalMetadata& metadata) {
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

  const std::vector<double> thresholds =
      config.thresholds.empty() ? default_ap_thresholds() : config.thresholds;
  nlohmann::ordered_json semantic;
  for (const auto& [task, iou] : report.iou_per_class) {
    nlohmann::ordered_json block;
    nlohmann::ordered_json per_class;
    for (int c = 1; c < static_cast<int>(iou.size()); ++c) {
      per_class[taxonomy.class_name(task, c)] =
          std::isfinite(iou[c]) ? nlohmann::ordered_json(iou[c]) : nullptr;
    }
    block["per_class"] = std::move(per_class);
    const double fg = report.mean_foreground.at(task);
    const double bg = report.mean_with_background.at(task);
    block["mean_foreground"] = std::isfinite(fg) ? nlohmann::ordered_json(fg) : nullptr;
    block["mean_with_background"] = std::isfinite(bg) ? nlohmann::ordered_json(bg) : nullptr;
    semantic[to_string(task)] = std::move(block);
  }
  doc["semantic"] = std::move(semantic);

  nlohmann::ordered_json instance;
  if (report.ap_r) {
    instance["ap_r_vol"] = naive_ap_to_json(*report.ap_r, Task::attribute, taxonomy,
                                            ApMetric::ap_r, thresholds, config.ap);
  }
  if (report.ap_p) {
    instance["ap_p_vol"] = naive_ap_to_json(*report.ap_p, Task::instance, taxonomy,
                                            ApMetric::ap_p, thresholds, config.ap);
  }
  if (!report.ap_cr.empty()) {
    nlohmann::ordered_json by_task;
    for (const auto& [task, ap] : report.ap_cr) {
      by_task[to_string(task)] =
          naive_ap_to_json(ap, task, taxonomy, ApMetric::ap_cr, thresholds, config.ap);
    }
    instance["ap_cr_vol"] = std::move(by_task);
  }
  doc["instance"] = std::move(instance);

  nlohmann::ordered_json meta;
  meta["images"] = metadata.images;
  meta["missing_predictions"] = metadata.missing_predictions;
  meta["discarded_empty_prediction_masks"] = metadata.discarded_empty_prediction_masks;
  doc["metadata"] = std::move(meta);
  return doc;
}

int run_eval(const EvalFlags& flags) {
  const EvalConfig config = make_config(flags);
  const DatasetManifest manifest = load_manifest(config.gt_manifest);
  const Taxonomy taxonomy = manifest_taxonomy(manifest);

  if (config.engine == EngineKind::naive) {
    if (!flags.table.empty()) {
      throw ConfigError("--table requires the main engine");
    }
    EvalMetadata metadata;
    std::vector<EvalPair> pairs = load_pairs(manifest, taxonomy, config,
                                             metadata.missing_predictions);
    metadata.images = static_cast<std::int64_t>(pairs.size());
    if (config.ap.discard_empty_pred_units) {
      for (const auto& pair : pairs) {
        if (!pair.pred) continue;
        for (const auto& inst : pair.pred->instances) {
          metadata.discarded_empty_prediction_masks += inst.mask.area() == 0;
        }
      }
    }
    const naive::Report report = naive::evaluate(pairs, taxonomy, config);
    write_text(flags.out, dump_canonical(naive_report_to_json(report, taxonomy, config,
                                                              metadata)));
    return 0;
  }

  const EvalReport report = evaluate_files(config, taxonomy);
  write_text(flags.out, dump_canonical(report_to_json(report, taxonomy, config)));
  if (!flags.table.empty()) {
    write_text(flags.table, render_table(report, taxonomy, config.mean_policy));
  }
  return 0;
}

int run_stats(const std::string& gt, int workers, const std::string& out) {
  const DatasetManifest manifest = load_manifest(gt);
  const Taxonomy taxonomy = manifest_taxonomy(manifest);
  const StatsReport stats = scan_stats(manifest, taxonomy, workers);
  write_text(out, dump_canonical(stats_to_json(stats, taxonomy)));
  return 0;
}

int run_validate(const std::string& gt, int workers, double tolerance, bool strict,
                 const std::string& out) {
  const DatasetManifest manifest = load_manifest(gt);
  const Taxonomy taxonomy = manifest_taxonomy(manifest);
  ValidateOptions options;
  options.tolerance = tolerance;
  const ValidationReport report = validate_dataset(manifest, taxonomy, options, workers);
  write_text(out, dump_canonical(validation_to_json(report)));
  const bool failed = report.error_count() > 0 || (strict && report.warning_count() > 0);
  return failed ? 1 : 0;
}

struct SynthFlags {
  std::string out;
  int images = 10;
  std::uint64_t seed = 0;
  int width = 64;
  int height = 64;
  std::string persons = "1:3";
  std::string parts = "2:4";
  double char_fraction = 0.7;
  int erode = 0;
  double score_noise = 0.0;
  double drop_prob = 0.0;
  double relabel_prob = 0.0;
};

int run_synth(const SynthFlags& flags) {
  SceneSpec spec;
  spec.width = flags.width;
  spec.height = flags.height;
  spec.persons = parse_range(flags.persons, "--persons");
  spec.parts_per_person = parse_range(flags.parts, "--parts");
  spec.characterizable_fraction = flags.char_fraction;

  std::optional<PerturbationSpec> perturbation;
  if (flags.erode > 0 || flags.score_noise > 0.0 || flags.drop_prob > 0.0 ||
      flags.relabel_prob > 0.0) {
    PerturbationSpec p;
    p.mask_erosion = flags.erode;
    p.score_noise = flags.score_noise;
    p.drop_instance_prob = flags.drop_prob;
    p.relabel_prob = {flags.relabel_prob, flags.relabel_prob, flags.relabel_prob,
                      flags.relabel_prob};
    perturbation = p;
  }
  const FixturePaths paths = write_fixture(flags.out, flags.images, flags.seed, spec,
                                           perturbation, default_taxonomy());
  std::cout << "wrote " << flags.images << " images under " << paths.root.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"evaluation engine and dataset toolkit for characterized instance-level "
               "human parsing"};
  app.require_subcommand(1);

  EvalFlags eval_flags;
  auto* eval_cmd = app.add_subcommand("eval", "score predictions against ground truth");
  eval_cmd->add_option("--gt", eval_flags.gt, "ground-truth manifest JSON")->required();
  eval_cmd->add_option("--pred", eval_flags.pred, "directory of <image_id>.json predictions")
      ->required();
  eval_cmd->add_option("--out", eval_flags.out, "report JSON path (default stdout)");
  eval_cmd->add_option("--table", eval_flags.table, "also render a per-class table here");
  eval_cmd->add_option("--tasks", eval_flags.tasks, "semantic tasks for mIoU (csv)");
  eval_cmd->add_option("--metrics", eval_flags.metrics, "miou,apr,app,apcr (csv)");
  eval_cmd->add_option("--thresholds", eval_flags.thresholds,
                       "IoU thresholds lo:hi:step or a single value");
  eval_cmd->add_option("--mean-policy", eval_flags.mean_policy,
                       "foreground_only|with_background");
  eval_cmd->add_option("--unit-granularity", eval_flags.granularity,
                       "per_attribute_region|per_instance");
  eval_cmd->add_option("--workers", eval_flags.workers, "worker threads (results identical)");
  eval_cmd->add_option("--engine", eval_flags.engine, "main|naive (naive = dense oracle)");
  eval_cmd->add_flag("--require-complete", eval_flags.require_complete,
                     "fail on a missing prediction file instead of scoring it empty");
  eval_cmd->add_flag("--keep-empty-pred-units", eval_flags.keep_empty_pred_units,
                     "rank empty predicted masks instead of discarding them");

  std::string stats_gt, stats_out;
  int stats_workers = 1;
  auto* stats_cmd = app.add_subcommand("stats", "dataset statistics");
  stats_cmd->add_option("--gt", stats_gt, "ground-truth manifest JSON")->required();
  stats_cmd->add_option("--workers", stats_workers, "worker threads");
  stats_cmd->add_option("--out", stats_out, "stats JSON path (default stdout)");

  std::string val_gt, val_out;
  int val_workers = 1;
  double val_tolerance = 1e-3;
  bool val_strict = false;
  auto* val_cmd = app.add_subcommand("validate", "annotation consistency checks");
  val_cmd->add_option("--gt", val_gt, "ground-truth manifest JSON")->required();
  val_cmd->add_option("--workers", val_workers, "worker threads");
  val_cmd->add_option("--tolerance", val_tolerance,
                      "violating-pixel fraction tolerated by the warning checks");
  val_cmd->add_flag("--strict", val_strict, "exit 1 on warnings too");
  val_cmd->add_option("--out", val_out, "validation JSON path (default stdout)");

  SynthFlags synth_flags;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset fixture");
  synth_cmd->add_option("--out", synth_flags.out, "output directory")->required();
  synth_cmd->add_option("--images", synth_flags.images, "number of images");
  synth_cmd->add_option("--seed", synth_flags.seed, "generator seed");
  synth_cmd->add_option("--width", synth_flags.width, "raster width");
  synth_cmd->add_option("--height", synth_flags.height, "raster height");
  synth_cmd->add_option("--persons", synth_flags.persons, "persons per image, lo:hi");
  synth_cmd->add_option("--parts", synth_flags.parts, "parts per person, lo:hi");
  synth_cmd->add_option("--char-fraction", synth_flags.char_fraction,
                        "chance a part takes a characterizable class");
  synth_cmd->add_option("--erode", synth_flags.erode,
                        "perturbation: erosion radius on predicted masks");
  synth_cmd->add_option("--score-noise", synth_flags.score_noise,
                        "perturbation: gaussian sigma on scores");
  synth_cmd->add_option("--drop-prob", synth_flags.drop_prob,
                        "perturbation: chance to drop a predicted instance");
  synth_cmd->add_option("--relabel-prob", synth_flags.relabel_prob,
                        "perturbation: per-class relabel chance, all semantic tasks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (eval_cmd->parsed()) return run_eval(eval_flags);
    if (stats_cmd->parsed()) return run_stats(stats_gt, stats_workers, stats_out);
    if (val_cmd->parsed()) {
      return run_validate(val_gt, val_workers, val_tolerance, val_strict, val_out);
    }
    if (synth_cmd->parsed()) return run_synth(synth_flags);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
