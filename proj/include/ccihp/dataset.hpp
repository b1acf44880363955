#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ccihp/errors.hpp"
#include "ccihp/maskcore.hpp"
#include "ccihp/taxonomy.hpp"

namespace ccihp {

// ---- manifests --------------------------------------------------------------

struct ManifestEntry {
  std::string id;
  std::string split;
  std::array<std::string, 5> rasters;  // indexed by Task; instance last
};

struct DatasetManifest {
  std::filesystem::path base_dir;  // directory containing the manifest file
  std::filesystem::path root;      // resolved raster root
  std::string taxonomy_path;       // empty -> stock catalog
  std::vector<ManifestEntry> images;
};

DatasetManifest load_manifest(const std::string& path);
Taxonomy manifest_taxonomy(const DatasetManifest& manifest);

// ---- samples ----------------------------------------------------------------

struct ImageSample {
  std::string id;
  LabelMap attribute, size, pattern, color, instance;

  const LabelMap& map(Task task) const;
  LabelMap& map(Task task);
};

// Lenient load keeps out-of-range labels so the validator can report them;
// strict load (the evaluator) throws ClassOutOfRange instead.
ImageSample load_sample(const DatasetManifest& manifest, const ManifestEntry& entry,
                        const Taxonomy& taxonomy, bool lenient = false);

// ---- predictions --------------------------------------------------------------

struct PredictedInstance {
  double score = 0.0;
  RleMask mask;
};

struct ImagePrediction {
  std::string image_id;
  int width = 0;
  int height = 0;
  std::vector<PredictedInstance> instances;
  std::array<LabelMap, 4> semantic;  // indexed by semantic Task

  std::vector<double> scores() const;
  std::vector<RleMask> masks() const;
};

// The canonical "no prediction" stand-in for a missing prediction file.
ImagePrediction empty_prediction(const std::string& image_id, int height, int width,
                                 const Taxonomy& taxonomy);

ImagePrediction prediction_from_json(const nlohmann::json& doc, const Taxonomy& taxonomy,
                                     int height, int width,
                                     const std::filesystem::path& base_dir);
ImagePrediction load_prediction(const std::string& path, const Taxonomy& taxonomy, int height,
                                int width);
nlohmann::ordered_json prediction_to_json(const ImagePrediction& prediction);

// ---- JSON codecs --------------------------------------------------------------

// Binary mask: {"size": [H, W], "counts": [...]}.
nlohmann::ordered_json rle_to_json(const RleMask& rle);
RleMask rle_from_json(const nlohmann::json& doc);

// Label map: {"size": [H, W], "runs": [[value, count], ...]} in row-major
// order, counts summing to H*W.
nlohmann::ordered_json label_runs_to_json(const LabelMap& map);
LabelMap label_map_from_runs(const nlohmann::json& doc, Task task, int max_index, int height,
                             int width);

// ---- statistics ---------------------------------------------------------------

struct StatsReport {
  std::int64_t images = 0;
  std::map<std::string, std::int64_t> per_split;
  std::int64_t instances_total = 0;
  std::map<int, std::int64_t> people_histogram;  // persons per image -> images
  std::array<std::map<int, std::int64_t>, 4> images_per_label;  // class -> images with >= 1 px
  std::array<std::map<int, std::int64_t>, 4> pixels_per_class;
  std::vector<std::string> errors;  // unreadable rasters; the scan continues

  double people_mean() const;
  void merge_from(const StatsReport& other);
};

StatsReport scan_sample_stats(const ImageSample& sample, const std::string& split);
StatsReport scan_stats(const DatasetManifest& manifest, const Taxonomy& taxonomy,
                       int workers = 1);

// ---- validation ---------------------------------------------------------------

enum class Severity { warning, error };
const char* to_string(Severity severity);

struct Violation {
  std::string code;  // V1..V6
  Severity severity = Severity::warning;
  std::string detail;
  std::int64_t pixels = 0;
};

struct ImageValidation {
  std::string image_id;
  std::vector<Violation> violations;
};

struct ValidationReport {
  std::vector<ImageValidation> images;  // only images with findings
  std::int64_t images_checked = 0;

  std::int64_t error_count() const;
  std::int64_t warning_count() const;
};

struct ValidateOptions {
  // V1/V3 findings are suppressed while violating pixels stay within this
  // fraction of the check's own region (annotation noise).
  double tolerance = 1e-3;
};

// V1 characteristic outside characterizable attribute foreground (warning),
// V2 sparse size off the hair class (error), V3 attribute outside instance
// foreground (warning), V4 non-contiguous instance ids (error), V5 raster
// dimension mismatch (error), V6 class id beyond catalog (error).
std::vector<Violation> validate_sample(const ImageSample& sample, const Taxonomy& taxonomy,
                                       const ValidateOptions& options = {});
ValidationReport validate_dataset(const DatasetManifest& manifest, const Taxonomy& taxonomy,
                                  const ValidateOptions& options = {}, int workers = 1);

}  // namespace ccihp
