#include "ccihp/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "ccihp/parallel.hpp"
#include "ccihp/png_io.hpp"

namespace ccihp {

namespace fs = std::filesystem;

namespace {

nlohmann::json parse_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  try {
    nlohmann::json doc;
    in >> doc;
    return doc;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("invalid JSON in " + path + ": " + e.what());
  }
}

fs::path resolve(const fs::path& base, const std::string& path) {
  fs::path p(path);
  return p.is_absolute() ? p : base / p;
}

}  // namespace

// ---- manifests ----

DatasetManifest load_manifest(const std::string& path) {
  const auto doc = parse_json_file(path);
  if (!doc.is_object()) throw SchemaError("manifest: document must be a JSON object: " + path);
  DatasetManifest manifest;
  manifest.base_dir = fs::absolute(fs::path(path)).parent_path();
  const std::string root = doc.value("root", std::string());
  manifest.root = root.empty() ? manifest.base_dir : resolve(manifest.base_dir, root);
  manifest.taxonomy_path = doc.value("taxonomy", std::string());
  if (!doc.contains("images") || !doc["images"].is_array()) {
    throw SchemaError("manifest: missing image list: " + path);
  }
  std::set<std::string> seen;
  for (const auto& e : doc["images"]) {
    if (!e.is_object() || !e.contains("id") || !e["id"].is_string()) {
      throw SchemaError("manifest: image entry without string id");
    }
    ManifestEntry entry;
    entry.id = e["id"].get<std::string>();
    if (!seen.insert(entry.id).second) {
      throw SchemaError("manifest: duplicate image id '" + entry.id + "'");
    }
    entry.split = e.value("split", std::string());
    for (Task t : {Task::attribute, Task::size, Task::pattern, Task::color, Task::instance}) {
      const char* key = to_string(t);
      if (!e.contains(key) || !e[key].is_string()) {
        throw SchemaError("manifest: image '" + entry.id + "' missing raster path '" + key +
                          "'");
      }
      entry.rasters[static_cast<int>(t)] = e[key].get<std::string>();
    }
    manifest.images.push_back(std::move(entry));
  }
  return manifest;
}

Taxonomy manifest_taxonomy(const DatasetManifest& manifest) {
  if (manifest.taxonomy_path.empty()) return default_taxonomy();
  return load_taxonomy_file(resolve(manifest.base_dir, manifest.taxonomy_path).string());
}

// ---- samples ----

const LabelMap& ImageSample::map(Task task) const {
  switch (task) {
    case Task::attribute: return attribute;
    case Task::size: return size;
    case Task::pattern: return pattern;
    case Task::color: return color;
    case Task::instance: return instance;
  }
  throw ConfigError("ImageSample: unknown task");
}

LabelMap& ImageSample::map(Task task) {
  return const_cast<LabelMap&>(static_cast<const ImageSample*>(this)->map(task));
}

ImageSample load_sample(const DatasetManifest& manifest, const ManifestEntry& entry,
                        const Taxonomy& taxonomy, bool lenient) {
  ImageSample sample;
  sample.id = entry.id;
  for (Task t : {Task::attribute, Task::size, Task::pattern, Task::color, Task::instance}) {
    const std::string path = resolve(manifest.root, entry.rasters[static_cast<int>(t)]).string();
    RasterData raster = read_png_raster(path);
    if (t == Task::instance) {
      const std::int32_t max_id = raster.grid.size() > 0 ? raster.grid.maxCoeff() : 0;
      sample.map(t) = LabelMap(Task::instance, std::move(raster.grid), max_id);
      continue;
    }
    const int count = taxonomy.class_count(t);
    if (lenient) {
      const std::int32_t seen = raster.grid.size() > 0 ? raster.grid.maxCoeff() : 0;
      sample.map(t) = LabelMap::unchecked(t, std::move(raster.grid),
                                          std::max<std::int32_t>(seen, count));
    } else {
      try {
        sample.map(t) = LabelMap(t, std::move(raster.grid), count);
      } catch (const ClassOutOfRange& e) {
        throw ClassOutOfRange(std::string(e.what()) + " in " + path);
      }
    }
  }
  return sample;
}

// ---- predictions ----

std::vector<double> ImagePrediction::scores() const {
  std::vector<double> out;
  out.reserve(instances.size());
  for (const auto& i : instances) out.push_back(i.score);
  return out;
}

std::vector<RleMask> ImagePrediction::masks() const {
  std::vector<RleMask> out;
  out.reserve(instances.size());
  for (const auto& i : instances) out.push_back(i.mask);
  return out;
}

ImagePrediction empty_prediction(const std::string& image_id, int height, int width,
                                 const Taxonomy& taxonomy) {
  ImagePrediction pred;
  pred.image_id = image_id;
  pred.height = height;
  pred.width = width;
  for (Task t : kSemanticTasks) {
    pred.semantic[static_cast<int>(t)] =
        LabelMap(t, LabelGrid::Zero(height, width), taxonomy.class_count(t));
  }
  return pred;
}

RleMask rle_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("size") || !doc.contains("counts") ||
      !doc["size"].is_array() || doc["size"].size() != 2 || !doc["counts"].is_array()) {
    throw SchemaError("rle: expected {\"size\": [H, W], \"counts\": [...]}");
  }
  RleMask rle;
  rle.height = doc["size"][0].get<int>();
  rle.width = doc["size"][1].get<int>();
  for (const auto& c : doc["counts"]) {
    if (!c.is_number_integer() && !c.is_number_unsigned()) {
      throw SchemaError("rle: counts must be integers");
    }
    rle.counts.push_back(c.get<std::int64_t>());
  }
  rle_validate(rle);
  return rle;
}

nlohmann::ordered_json rle_to_json(const RleMask& rle) {
  nlohmann::ordered_json doc;
  doc["size"] = {rle.height, rle.width};
  doc["counts"] = rle.counts;
  return doc;
}

LabelMap label_map_from_runs(const nlohmann::json& doc, Task task, int max_index, int height,
                             int width) {
  if (!doc.is_object() || !doc.contains("size") || !doc.contains("runs") ||
      !doc["size"].is_array() || doc["size"].size() != 2 || !doc["runs"].is_array()) {
    throw SchemaError("label runs: expected {\"size\": [H, W], \"runs\": [[value, count], ...]}");
  }
  if (doc["size"][0].get<int>() != height || doc["size"][1].get<int>() != width) {
    throw DimensionMismatch("label runs: size differs from the image");
  }
  LabelGrid grid(height, width);
  std::int32_t* out = grid.data();
  const std::int64_t hw = static_cast<std::int64_t>(height) * width;
  std::int64_t pos = 0;
  for (const auto& run : doc["runs"]) {
    if (!run.is_array() || run.size() != 2 || !run[0].is_number_integer() ||
        !run[1].is_number_integer()) {
      throw SchemaError("label runs: each run must be [value, count]");
    }
    const std::int64_t value = run[0].get<std::int64_t>();
    const std::int64_t count = run[1].get<std::int64_t>();
    if (value < 0 || value > max_index) {
      throw ClassOutOfRange("label runs: value " + std::to_string(value) + " outside [0, " +
                            std::to_string(max_index) + "]");
    }
    if (count <= 0) throw SchemaError("label runs: run count must be positive");
    if (pos + count > hw) throw CountsMismatch("label runs: runs overrun the image");
    std::fill(out + pos, out + pos + count, static_cast<std::int32_t>(value));
    pos += count;
  }
  if (pos != hw) throw CountsMismatch("label runs: runs do not cover the image");
  return LabelMap(task, std::move(grid), max_index);
}

nlohmann::ordered_json label_runs_to_json(const LabelMap& map) {
  nlohmann::ordered_json doc;
  doc["size"] = {map.height(), map.width()};
  nlohmann::ordered_json runs = nlohmann::ordered_json::array();
  const std::int32_t* p = map.grid().data();
  const std::int64_t hw = static_cast<std::int64_t>(map.height()) * map.width();
  std::int64_t start = 0;
  for (std::int64_t q = 1; q <= hw; ++q) {
    if (q == hw || p[q] != p[start]) {
      runs.push_back({p[start], q - start});
      start = q;
    }
  }
  doc["runs"] = std::move(runs);
  return doc;
}

ImagePrediction prediction_from_json(const nlohmann::json& doc, const Taxonomy& taxonomy,
                                     int height, int width,
                                     const std::filesystem::path& base_dir) {
  if (!doc.is_object()) throw SchemaError("prediction: document must be a JSON object");
  ImagePrediction pred;
  pred.image_id = doc.value("image_id", std::string());
  if (!doc.contains("height") || !doc.contains("width")) {
    throw SchemaError("prediction: missing height/width");
  }
  pred.height = doc["height"].get<int>();
  pred.width = doc["width"].get<int>();
  if (pred.height != height || pred.width != width) {
    throw DimensionMismatch("prediction: dimensions differ from ground truth for image '" +
                            pred.image_id + "'");
  }
  if (doc.contains("instances")) {
    if (!doc["instances"].is_array()) throw SchemaError("prediction: instances must be a list");
    for (const auto& inst : doc["instances"]) {
      if (!inst.is_object() || !inst.contains("score") || !inst.contains("mask")) {
        throw SchemaError("prediction: each instance needs score and mask");
      }
      if (!inst["score"].is_number()) throw SchemaError("prediction: score must be a number");
      PredictedInstance p;
      p.score = inst["score"].get<double>();
      if (!(p.score >= 0.0 && p.score <= 1.0)) {
        throw SchemaError("prediction: score outside [0, 1]");
      }
      p.mask = rle_from_json(inst["mask"]);
      if (p.mask.height != height || p.mask.width != width) {
        throw DimensionMismatch("prediction: instance mask dimensions differ from the image");
      }
      pred.instances.push_back(std::move(p));
    }
  }
  const nlohmann::json semantic =
      doc.contains("semantic") ? doc["semantic"] : nlohmann::json::object();
  if (!semantic.is_object()) throw SchemaError("prediction: semantic must be an object");
  for (Task t : kSemanticTasks) {
    const char* key = to_string(t);
    const int count = taxonomy.class_count(t);
    if (!semantic.contains(key)) {
      pred.semantic[static_cast<int>(t)] =
          LabelMap(t, LabelGrid::Zero(height, width), count);
      continue;
    }
    const auto& value = semantic[key];
    if (value.is_string()) {
      RasterData raster = read_png_raster(resolve(base_dir, value.get<std::string>()).string());
      if (raster.height != height || raster.width != width) {
        throw DimensionMismatch("prediction: semantic raster dimensions differ from the image");
      }
      pred.semantic[static_cast<int>(t)] = LabelMap(t, std::move(raster.grid), count);
    } else {
      pred.semantic[static_cast<int>(t)] = label_map_from_runs(value, t, count, height, width);
    }
  }
  return pred;
}

ImagePrediction load_prediction(const std::string& path, const Taxonomy& taxonomy, int height,
                                int width) {
  const auto doc = parse_json_file(path);
  return prediction_from_json(doc, taxonomy, height, width,
                              fs::absolute(fs::path(path)).parent_path());
}

nlohmann::ordered_json prediction_to_json(const ImagePrediction& prediction) {
  nlohmann::ordered_json doc;
  doc["image_id"] = prediction.image_id;
  doc["height"] = prediction.height;
  doc["width"] = prediction.width;
  nlohmann::ordered_json instances = nlohmann::ordered_json::array();
  for (const auto& inst : prediction.instances) {
    nlohmann::ordered_json entry;
    entry["score"] = inst.score;
    entry["mask"] = rle_to_json(inst.mask);
    instances.push_back(std::move(entry));
  }
  doc["instances"] = std::move(instances);
  nlohmann::ordered_json semantic;
  for (Task t : kSemanticTasks) {
    semantic[to_string(t)] = label_runs_to_json(prediction.semantic[static_cast<int>(t)]);
  }
  doc["semantic"] = std::move(semantic);
  return doc;
}

// ---- statistics ----

double StatsReport::people_mean() const {
  std::int64_t total = 0, weighted = 0;
  for (const auto& [people, n] : people_histogram) {
    total += n;
    weighted += people * n;
  }
  return total > 0 ? static_cast<double>(weighted) / static_cast<double>(total) : 0.0;
}

void StatsReport::merge_from(const StatsReport& other) {
  images += other.images;
  for (const auto& [k, v] : other.per_split) per_split[k] += v;
  instances_total += other.instances_total;
  for (const auto& [k, v] : other.people_histogram) people_histogram[k] += v;
  for (int t = 0; t < 4; ++t) {
    for (const auto& [k, v] : other.images_per_label[t]) images_per_label[t][k] += v;
    for (const auto& [k, v] : other.pixels_per_class[t]) pixels_per_class[t][k] += v;
  }
  errors.insert(errors.end(), other.errors.begin(), other.errors.end());
}

StatsReport scan_sample_stats(const ImageSample& sample, const std::string& split) {
  StatsReport report;
  report.images = 1;
  report.per_split[split] = 1;

  std::set<std::int32_t> ids;
  {
    const auto& grid = sample.instance.grid();
    const std::int32_t* p = grid.data();
    const std::int64_t hw = grid.size();
    for (std::int64_t q = 0; q < hw; ++q) {
      if (p[q] > 0) ids.insert(p[q]);
    }
  }
  const int people = static_cast<int>(ids.size());
  report.instances_total = people;
  report.people_histogram[people] = 1;

  for (Task t : kSemanticTasks) {
    const auto& grid = sample.map(t).grid();
    std::map<int, std::int64_t> pixels;
    const std::int32_t* p = grid.data();
    const std::int64_t hw = grid.size();
    for (std::int64_t q = 0; q < hw; ++q) {
      if (p[q] > 0) pixels[p[q]] += 1;
    }
    for (const auto& [cls, n] : pixels) {
      report.pixels_per_class[static_cast<int>(t)][cls] += n;
      report.images_per_label[static_cast<int>(t)][cls] += 1;
    }
  }
  return report;
}

StatsReport scan_stats(const DatasetManifest& manifest, const Taxonomy& taxonomy, int workers) {
  const std::size_t n = manifest.images.size();
  std::vector<StatsReport> slots(n);
  std::vector<std::string> failures(n);
  parallel_for(n, workers, [&](std::size_t i) {
    try {
      const ImageSample sample = load_sample(manifest, manifest.images[i], taxonomy, true);
      slots[i] = scan_sample_stats(sample, manifest.images[i].split);
    } catch (const Error& e) {
      failures[i] = "image '" + manifest.images[i].id + "': " + e.what();
    }
  });
  StatsReport total;
  for (std::size_t i = 0; i < n; ++i) {
    if (!failures[i].empty()) {
      total.errors.push_back(failures[i]);
    } else {
      total.merge_from(slots[i]);
    }
  }
  return total;
}

// ---- validation ----

const char* to_string(Severity severity) {
  return severity == Severity::error ? "error" : "warning";
}

std::int64_t ValidationReport::error_count() const {
  std::int64_t n = 0;
  for (const auto& img : images) {
    for (const auto& v : img.violations) n += v.severity == Severity::error;
  }
  return n;
}

std::int64_t ValidationReport::warning_count() const {
  std::int64_t n = 0;
  for (const auto& img : images) {
    for (const auto& v : img.violations) n += v.severity == Severity::warning;
  }
  return n;
}

std::vector<Violation> validate_sample(const ImageSample& sample, const Taxonomy& taxonomy,
                                       const ValidateOptions& options) {
  std::vector<Violation> out;
  const int h = sample.attribute.height(), w = sample.attribute.width();

  bool dims_ok = true;
  for (Task t : {Task::size, Task::pattern, Task::color, Task::instance}) {
    const auto& m = sample.map(t);
    if (m.height() != h || m.width() != w) dims_ok = false;
  }
  if (!dims_ok) {
    out.push_back({"V5", Severity::error, "raster dimensions differ across tasks", 0});
  }

  for (Task t : kSemanticTasks) {  // V6: class id beyond catalog
    const int count = taxonomy.class_count(t);
    const auto& grid = sample.map(t).grid();
    const std::int32_t* p = grid.data();
    std::int64_t bad = 0;
    for (std::int64_t q = 0; q < grid.size(); ++q) {
      if (p[q] > count || p[q] < 0) ++bad;
    }
    if (bad > 0) {
      out.push_back({"V6", Severity::error,
                     std::string(to_string(t)) + " labels beyond the " +
                         std::to_string(count) + "-class catalog",
                     bad});
    }
  }

  {  // V4: instance ids contiguous 1..P
    std::set<std::int32_t> ids;
    const auto& grid = sample.instance.grid();
    const std::int32_t* p = grid.data();
    for (std::int64_t q = 0; q < grid.size(); ++q) {
      if (p[q] > 0) ids.insert(p[q]);
    }
    if (!ids.empty()) {
      const std::int32_t top = *ids.rbegin();
      std::string missing;
      for (std::int32_t i = 1; i <= top; ++i) {
        if (!ids.count(i)) missing += (missing.empty() ? "" : ", ") + std::to_string(i);
      }
      if (!missing.empty()) {
        out.push_back({"V4", Severity::error,
                       "instance ids not contiguous, missing: " + missing, 0});
      }
    }
  }

  if (!dims_ok) return out;  // cross-raster checks need one pixel frame

  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  const std::int32_t* pa = sample.attribute.grid().data();
  const std::int32_t* pi = sample.instance.grid().data();
  const int attr_count = taxonomy.class_count(Task::attribute);
  std::vector<char> characterizable_flag(attr_count + 1, 0);
  for (int id : taxonomy.characterizable_ids()) characterizable_flag[id] = 1;

  {  // V2: sparse size off the hair class
    const std::int32_t* ps = sample.size.grid().data();
    const int sparse = taxonomy.sparse_index();
    const int hair = taxonomy.hair_index();
    std::int64_t bad = 0;
    for (std::int64_t q = 0; q < hw; ++q) {
      if (ps[q] == sparse && pa[q] != hair) ++bad;
    }
    if (bad > 0) {
      out.push_back({"V2", Severity::error,
                     "'" + taxonomy.class_name(Task::size, sparse) + "' size outside the '" +
                         taxonomy.class_name(Task::attribute, taxonomy.hair_index()) +
                         "' class",
                     bad});
    }
  }

  for (Task t : kCharacteristicTasks) {  // V1: characteristic off characterizable foreground
    const std::int32_t* pk = sample.map(t).grid().data();
    std::int64_t region = 0, bad = 0;
    for (std::int64_t q = 0; q < hw; ++q) {
      if (pk[q] == 0) continue;
      ++region;
      const std::int32_t a = pa[q];
      if (a < 1 || a > attr_count || !characterizable_flag[a]) ++bad;
    }
    if (bad > static_cast<double>(region) * options.tolerance) {
      out.push_back({"V1", Severity::warning,
                     std::string(to_string(t)) +
                         " characteristic outside characterizable attribute foreground",
                     bad});
    }
  }

  {  // V3: attribute foreground outside the instance foreground
    std::int64_t region = 0, bad = 0;
    for (std::int64_t q = 0; q < hw; ++q) {
      if (pa[q] == 0) continue;
      ++region;
      if (pi[q] == 0) ++bad;
    }
    if (bad > static_cast<double>(region) * options.tolerance) {
      out.push_back({"V3", Severity::warning,
                     "attribute foreground outside the instance foreground", bad});
    }
  }
  return out;
}

ValidationReport validate_dataset(const DatasetManifest& manifest, const Taxonomy& taxonomy,
                                  const ValidateOptions& options, int workers) {
  const std::size_t n = manifest.images.size();
  std::vector<std::vector<Violation>> slots(n);
  parallel_for(n, workers, [&](std::size_t i) {
    try {
      const ImageSample sample = load_sample(manifest, manifest.images[i], taxonomy, true);
      slots[i] = validate_sample(sample, taxonomy, options);
    } catch (const Error& e) {
      slots[i].push_back({"IO", Severity::error, e.what(), 0});
    }
  });
  ValidationReport report;
  report.images_checked = static_cast<std::int64_t>(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!slots[i].empty()) {
      report.images.push_back({manifest.images[i].id, std::move(slots[i])});
    }
  }
  return report;
}

}  // namespace ccihp
