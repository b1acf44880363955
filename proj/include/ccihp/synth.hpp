#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "ccihp/dataset.hpp"
#include "ccihp/errors.hpp"
#include "ccihp/taxonomy.hpp"

namespace ccihp {

// SplitMix64 (Steele/Lea/Flood, "Fast splittable pseudorandom number
// generators", OOPSLA 2014). State advances by the golden-ratio increment
// 0x9E3779B97F4A7C15; the output is two xorshift-multiply mixing rounds.
// Every draw below is fully specified by these constants, so a seed
// regenerates the same fixture bit-for-bit on any platform or toolchain
// (std::uniform_int_distribution and friends are implementation-defined,
// which would break frozen expectations).
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Lemire multiply-shift reduction onto [0, n); bias is < n / 2^64.
  std::uint64_t bounded(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next()) * n) >> 64);
  }

  // 53-bit mantissa in [0, 1).
  double real() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Box-Muller transform; the log argument lies in (0, 1].
  double gaussian() {
    const double u1 = static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
    const double u2 = real();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793238462643 * u2);
  }

 private:
  std::uint64_t state_;
};

struct Range {
  int lo = 0;
  int hi = 0;
};

// Scenes are axis-aligned disjoint person rectangles (one per horizontal
// slot), each tiled top-to-bottom into attribute bands; characterizable
// bands also carry a size/pattern/color. Every derivable statistic is
// accumulated while painting, independently of any scanner.
struct SceneSpec {
  int width = 64;
  int height = 64;
  Range persons = {1, 3};
  Range parts_per_person = {2, 4};
  double characterizable_fraction = 0.7;  // chance a band takes a characterizable class
};

// Seeded corruption of the (initially perfect) prediction.
struct PerturbationSpec {
  std::uint64_t seed = 0;
  int mask_erosion = 0;        // Chebyshev radius applied per class/instance
  double score_noise = 0.0;    // gaussian sigma added to scores, clamped to [0,1]
  double drop_instance_prob = 0.0;
  std::array<double, 4> relabel_prob = {0, 0, 0, 0};  // per semantic task, per class
};

struct Scene {
  ImageSample gt;
  ImagePrediction pred;  // exact copy of the truth until perturbed
};

// Throws SpecInfeasible when the requested rectangles cannot fit. When
// truth_accum is given, the scene's statistics (same shape scan_stats
// produces) are added to it; the split is recorded as "val".
Scene generate_scene(std::uint64_t seed, const SceneSpec& spec, const Taxonomy& taxonomy,
                     const std::string& image_id, StatsReport* truth_accum = nullptr);

void perturb(Scene& scene, const PerturbationSpec& spec, const Taxonomy& taxonomy);

// On-disk dataset: taxonomy.json, manifest.json, rasters/<id>_<task>.png
// (8-bit indexed for semantic tasks, 16-bit gray for instances),
// predictions/<id>.json, truth.json with the painted statistics.
struct FixturePaths {
  std::filesystem::path root;
  std::filesystem::path manifest;
  std::filesystem::path taxonomy;
  std::filesystem::path predictions;
  std::filesystem::path truth;
};

FixturePaths write_fixture(const std::filesystem::path& dir, int images, std::uint64_t seed,
                           const SceneSpec& scene_spec,
                           const std::optional<PerturbationSpec>& perturbation,
                           const Taxonomy& taxonomy);

}  // namespace ccihp
