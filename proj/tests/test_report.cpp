// JSON emitters and the fixed-width summary table.

#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "ccihp/report.hpp"

using namespace ccihp;

namespace {

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t pos = line.find('|');
  while (pos != std::string::npos) {
    const std::size_t next = line.find('|', pos + 1);
    std::string cell = line.substr(pos + 1, next == std::string::npos ? next : next - pos - 1);
    const std::size_t a = cell.find_first_not_of(' ');
    const std::size_t b = cell.find_last_not_of(" \n");
    cells.push_back(a == std::string::npos ? "" : cell.substr(a, b - a + 1));
    pos = next;
  }
  return cells;
}

std::string line_starting_with(const std::string& text, const std::string& prefix,
                               std::size_t from = 0) {
  std::istringstream in(text.substr(from));
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(prefix, 0) == 0) return line;
  }
  return {};
}

ApReport size_characteristic_report() {
  ApReport ap;
  ap.metric = ApMetric::ap_cr;
  ap.task = Task::size;
  ap.thresholds = default_ap_thresholds();
  const std::vector<double> volumes = {0.331, 0.375, 0.135, 0.137};
  for (int cls = 1; cls <= 4; ++cls) {
    ApClassResult r;
    r.per_threshold.assign(9, volumes[static_cast<std::size_t>(cls - 1)]);
    r.volume = volumes[static_cast<std::size_t>(cls - 1)];
    r.n_gt = 10 * cls;
    ap.per_class.emplace(cls, std::move(r));
  }
  ap.overall = 0.245;
  return ap;
}

}  // namespace

TEST_CASE("canonical dumps are deterministic and map non-finite to null") {
  nlohmann::ordered_json doc;
  doc["b"] = 1;
  doc["a"] = std::numeric_limits<double>::quiet_NaN();
  doc["c"] = std::numeric_limits<double>::infinity();
  const std::string text = dump_canonical(doc);
  CHECK(text == dump_canonical(doc));
  CHECK(text.back() == '\n');
  CHECK(text.find("\"a\": null") != std::string::npos);
  CHECK(text.find("\"c\": null") != std::string::npos);
  // Insertion order survives; keys are not re-sorted.
  CHECK(text.find("\"b\"") < text.find("\"a\""));
}

TEST_CASE("ap report serialization interleaves defined and undefined classes") {
  const Taxonomy tax = default_taxonomy();
  ApReport ap;
  ap.metric = ApMetric::ap_cr;
  ap.task = Task::size;
  ap.thresholds = {0.5};
  ApClassResult r;
  r.per_threshold = {0.75};
  r.volume = 0.75;
  r.n_gt = 4;
  ap.per_class.emplace(2, r);
  ap.undefined_classes = {1, 3, 4};
  ap.overall = 0.75;

  const nlohmann::ordered_json doc = ap_report_to_json(ap, tax);
  CHECK(doc["metric"] == "ap_cr_vol");
  CHECK(doc["task"] == "size");
  CHECK(doc["per_class"]["Short/small"].is_null());
  CHECK(doc["per_class"]["Long/large"]["volume"] == 0.75);
  CHECK(doc["per_class"]["Long/large"]["n_gt"] == 4);
  CHECK(doc["per_class"]["Undetermined"].is_null());
  CHECK(doc["per_class"]["Sparse/bald"].is_null());
  // Ascending class order regardless of defined/undefined split.
  std::vector<std::string> order;
  for (const auto& [k, v] : doc["per_class"].items()) order.push_back(k);
  CHECK(order == std::vector<std::string>{"Short/small", "Long/large", "Undetermined",
                                          "Sparse/bald"});
  CHECK(doc["overall"] == 0.75);
  CHECK(doc["config"]["tie_break"] == "score_desc,ingest_asc,gt_first");
  CHECK(doc["config"]["integration"] == "all_point_interpolation");
  CHECK(doc["config"]["discard_empty_pred_units"] == true);

  ApReport empty;
  empty.metric = ApMetric::ap_p;
  empty.task = Task::instance;
  empty.thresholds = {0.5};
  empty.undefined_classes = {0};
  empty.overall = std::numeric_limits<double>::quiet_NaN();
  const nlohmann::ordered_json person = ap_report_to_json(empty, tax);
  CHECK(person["task"] == "person");
  CHECK(person["per_class"]["person"].is_null());
  CHECK(person["overall"].is_null());
}

TEST_CASE("evaluation report config echo omits worker count") {
  const Taxonomy tax = default_taxonomy();
  EvalReport report;
  report.semantic.emplace(Task::size, ConfusionMatrix(Task::size, 5));
  report.semantic.at(Task::size).counts(1, 1) = 4;
  report.semantic.at(Task::size).counts(2, 1) = 4;
  report.metadata.images = 2;
  report.metadata.missing_predictions = {"b"};
  report.metadata.discarded_empty_prediction_masks = 3;

  EvalConfig config;
  config.workers = 8;

  const nlohmann::ordered_json doc = report_to_json(report, tax, config);
  CHECK(doc["schema"] == "ccihp-eval/report/v1");
  CHECK_FALSE(doc["config"].contains("workers"));
  CHECK(doc["config"]["engine"] == "main");
  CHECK(doc["config"]["mean_policy"] == "foreground_only");
  CHECK(doc["config"]["thresholds"].size() == 9);  // empty resolves to defaults
  CHECK(doc["config"]["thresholds"][0] == 0.1);

  const auto& size_block = doc["semantic"]["size"];
  CHECK(size_block["per_class"]["Short/small"] == 0.5);
  CHECK(size_block["per_class"]["Long/large"] == 0.0);
  CHECK(size_block["per_class"]["Undetermined"].is_null());
  CHECK(size_block["mean_foreground"] == 0.25);

  CHECK(doc["instance"].empty());
  CHECK(doc["metadata"]["images"] == 2);
  CHECK(doc["metadata"]["missing_predictions"] == nlohmann::ordered_json::array({"b"}));
  CHECK(doc["metadata"]["discarded_empty_prediction_masks"] == 3);

  SUBCASE("explicit thresholds pass through unchanged") {
    config.thresholds = {0.25, 0.75};
    const nlohmann::ordered_json d2 = report_to_json(report, tax, config);
    CHECK(d2["config"]["thresholds"] == nlohmann::ordered_json::array({0.25, 0.75}));
  }
  SUBCASE("a task with no defined class serializes null means") {
    EvalReport blank;
    blank.semantic.emplace(Task::color, ConfusionMatrix(Task::color, 13));
    const nlohmann::ordered_json d2 = report_to_json(blank, tax, config);
    CHECK(d2["semantic"]["color"]["mean_foreground"].is_null());
    CHECK(d2["semantic"]["color"]["mean_with_background"].is_null());
  }
}

TEST_CASE("stats serialization") {
  const Taxonomy tax = default_taxonomy();
  StatsReport stats;
  stats.images = 3;
  stats.per_split["train"] = 1;
  stats.per_split["val"] = 2;
  stats.instances_total = 5;
  stats.people_histogram[1] = 1;
  stats.people_histogram[2] = 2;
  stats.pixels_per_class[0][2] = 40;
  stats.images_per_label[0][2] = 3;
  stats.errors.push_back("image 'x': unreadable");

  const nlohmann::ordered_json doc = stats_to_json(stats, tax);
  CHECK(doc["schema"] == "ccihp-eval/stats/v1");
  CHECK(doc["images"] == 3);
  CHECK(doc["per_split"]["val"] == 2);
  CHECK(doc["people_histogram"]["2"] == 2);
  CHECK(doc["people_mean"] == 5.0 / 3.0);
  CHECK(doc["tasks"]["attribute"]["Hair"]["pixels"] == 40);
  CHECK(doc["tasks"]["attribute"]["Hair"]["images"] == 3);
  CHECK(doc["tasks"]["size"].empty());
  CHECK(doc["errors"].size() == 1);
}

TEST_CASE("validation serialization") {
  ValidationReport report;
  report.images_checked = 7;
  report.images.push_back(
      {"img_3", {{"V2", Severity::error, "sparse off hair", 12},
                 {"V1", Severity::warning, "color off characterizable", 3}}});
  const nlohmann::ordered_json doc = validation_to_json(report);
  CHECK(doc["schema"] == "ccihp-eval/validation/v1");
  CHECK(doc["images_checked"] == 7);
  CHECK(doc["errors"] == 1);
  CHECK(doc["warnings"] == 1);
  CHECK(doc["images"][0]["image_id"] == "img_3");
  CHECK(doc["images"][0]["violations"][0]["code"] == "V2");
  CHECK(doc["images"][0]["violations"][0]["pixels"] == 12);
  CHECK(doc["images"][0]["violations"][1]["severity"] == "warning");
}

TEST_CASE("size characteristic table block renders one-decimal percentages") {
  const Taxonomy tax = default_taxonomy();
  EvalReport report;
  report.ap_cr.emplace(Task::size, size_characteristic_report());

  const std::string table = render_table(report, tax, MeanPolicy::foreground_only);
  const std::size_t block = table.find("== size ==");
  REQUIRE(block != std::string::npos);

  const std::string header = line_starting_with(table, " ", block);
  CHECK(split_cells(header) ==
        std::vector<std::string>{"all", "Short", "Long", "Undet.", "Sparse"});

  const std::string row = line_starting_with(table, "AP^cr_vol", block);
  REQUIRE(!row.empty());
  CHECK(split_cells(row) ==
        std::vector<std::string>{"24.5", "33.1", "37.5", "13.5", "13.7"});
}

TEST_CASE("table renders means, dashes, and the person block") {
  const Taxonomy tax = default_taxonomy();
  EvalReport report;
  ConfusionMatrix cm(Task::size, 5);
  cm.counts(1, 1) = 3;
  cm.counts(1, 0) = 3;  // Short/small IoU one half, everything else undefined
  report.semantic.emplace(Task::size, cm);

  ApReport ap_p;
  ap_p.metric = ApMetric::ap_p;
  ap_p.task = Task::instance;
  ap_p.thresholds = {0.5};
  ApClassResult person;
  person.per_threshold = {0.625};
  person.volume = 0.625;
  person.n_gt = 8;
  ap_p.per_class.emplace(0, person);
  ap_p.overall = 0.625;
  report.ap_p = ap_p;

  const std::string table = render_table(report, tax, MeanPolicy::foreground_only);
  const std::string miou = line_starting_with(table, "mIoU[foreground_only]");
  REQUIRE(!miou.empty());
  CHECK(split_cells(miou) == std::vector<std::string>{"50.0", "50.0", "-", "-", "-"});

  const std::size_t person_block = table.find("== person ==");
  REQUIRE(person_block != std::string::npos);
  const std::string prow = line_starting_with(table, "AP^p_vol", person_block);
  CHECK(split_cells(prow) == std::vector<std::string>{"62.5"});
}
