// Seeded scene generation, perturbation, and on-disk fixtures.

#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <string>
#include <vector>

#include "ccihp/report.hpp"
#include "ccihp/synth.hpp"

using namespace ccihp;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() /
           ("ccihp_synth_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

bool same_grids(const LabelMap& a, const LabelMap& b) {
  return a.height() == b.height() && a.width() == b.width() && (a.grid() == b.grid()).all();
}

}  // namespace

TEST_CASE("the generator's stream matches the published reference outputs") {
  // First three draws for seeds 0 and 0x0123456789ABCDEF, cross-checked
  // against an independent implementation of the same recurrence.
  SplitMix64 zero(0);
  CHECK(zero.next() == 0xE220A8397B1DCDAFULL);
  CHECK(zero.next() == 0x6E789E6AA1B965F4ULL);
  CHECK(zero.next() == 0x06C45D188009454FULL);
  SplitMix64 other(0x0123456789ABCDEFULL);
  CHECK(other.next() == 0x157A3807A48FAA9DULL);
  CHECK(other.next() == 0xD573529B34A1D093ULL);
  CHECK(other.next() == 0x2F90B72E996DCCBEULL);
}

TEST_CASE("derived draws stay in range and are reproducible") {
  SplitMix64 a(42);
  for (int i = 0; i < 1000; ++i) {
    const std::uint64_t n = 1 + a.next() % 100;
    CHECK(a.bounded(n) < n);
    const double r = a.real();
    CHECK(r >= 0.0);
    CHECK(r < 1.0);
  }
  SplitMix64 x(7), y(7);
  for (int i = 0; i < 100; ++i) CHECK(x.next() == y.next());
  for (int i = 0; i < 100; ++i) {
    const double g = x.gaussian();
    CHECK(std::isfinite(g));
  }
}

TEST_CASE("scene generation is deterministic in the seed") {
  const Taxonomy tax = default_taxonomy();
  const SceneSpec spec;
  const Scene a = generate_scene(123, spec, tax, "img");
  const Scene b = generate_scene(123, spec, tax, "img");
  for (Task t : kSemanticTasks) CHECK(same_grids(a.gt.map(t), b.gt.map(t)));
  CHECK(same_grids(a.gt.instance, b.gt.instance));
  REQUIRE(a.pred.instances.size() == b.pred.instances.size());
  for (std::size_t i = 0; i < a.pred.instances.size(); ++i) {
    CHECK(a.pred.instances[i].mask.counts == b.pred.instances[i].mask.counts);
    CHECK(a.pred.instances[i].score == b.pred.instances[i].score);
  }

  const Scene c = generate_scene(124, spec, tax, "img");
  bool any_difference = !same_grids(a.gt.instance, c.gt.instance);
  for (Task t : kSemanticTasks) any_difference |= !same_grids(a.gt.map(t), c.gt.map(t));
  CHECK(any_difference);
}

TEST_CASE("generated scenes satisfy every dataset invariant") {
  const Taxonomy tax = default_taxonomy();
  SceneSpec spec;
  spec.persons = {1, 4};
  spec.parts_per_person = {2, 4};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scene scene = generate_scene(seed, spec, tax, "img");
    const ImageSample& gt = scene.gt;

    // The validator finds nothing to complain about.
    CHECK(validate_sample(gt, tax).empty());

    // Instance ids are contiguous from one and within the requested range.
    std::set<std::int32_t> ids;
    for (int r = 0; r < gt.instance.height(); ++r)
      for (int c = 0; c < gt.instance.width(); ++c)
        if (gt.instance.at(r, c) > 0) ids.insert(gt.instance.at(r, c));
    CHECK(static_cast<int>(ids.size()) >= spec.persons.lo);
    CHECK(static_cast<int>(ids.size()) <= spec.persons.hi);
    if (!ids.empty()) CHECK(*ids.rbegin() == static_cast<std::int32_t>(ids.size()));

    for (int r = 0; r < gt.instance.height(); ++r) {
      for (int c = 0; c < gt.instance.width(); ++c) {
        const bool person = gt.instance.at(r, c) > 0;
        // Attribute foreground exactly tiles the person rectangles.
        CHECK((gt.attribute.at(r, c) > 0) == person);
        const int attr = gt.attribute.at(r, c);
        const bool characterized = attr > 0 && tax.is_characterizable(attr);
        for (Task t : kCharacteristicTasks) {
          const int v = gt.map(t).at(r, c);
          CHECK(v >= 0);
          CHECK(v <= tax.class_count(t));
          // Characteristics appear exactly on characterizable regions.
          CHECK((v > 0) == characterized);
        }
        if (gt.size.at(r, c) == tax.sparse_index()) {
          CHECK(attr == tax.hair_index());
        }
      }
    }

    // The prediction starts as a faithful copy of the truth.
    CHECK(scene.pred.image_id == "img");
    CHECK(static_cast<int>(scene.pred.instances.size()) == static_cast<int>(ids.size()));
    for (std::size_t i = 0; i < scene.pred.instances.size(); ++i) {
      CHECK(scene.pred.instances[i].score == 1.0);
      const BinaryMask decoded = rle_decode(scene.pred.instances[i].mask);
      const BinaryMask truth = class_mask(gt.instance, static_cast<int>(i) + 1);
      CHECK((decoded.grid() == truth.grid()).all());
    }
    for (Task t : kSemanticTasks)
      CHECK(same_grids(scene.pred.semantic[static_cast<int>(t)], gt.map(t)));
  }
}

TEST_CASE("painted statistics equal a scan of the painted scene") {
  const Taxonomy tax = default_taxonomy();
  StatsReport painted;
  StatsReport scanned;
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    const Scene scene = generate_scene(seed, SceneSpec{}, tax, "img", &painted);
    scanned.merge_from(scan_sample_stats(scene.gt, "val"));
  }
  // Two independent computations of the same numbers: the generator tallies
  // while painting, the scanner walks the finished rasters.
  const std::string a = dump_canonical(stats_to_json(painted, tax));
  const std::string b = dump_canonical(stats_to_json(scanned, tax));
  CHECK(a == b);
}

TEST_CASE("infeasible scene requests are rejected") {
  const Taxonomy tax = default_taxonomy();
  SceneSpec spec;
  spec.width = 0;
  CHECK_THROWS_AS(generate_scene(1, spec, tax, "img"), SpecInfeasible);
  spec = {};
  spec.persons = {3, 2};
  CHECK_THROWS_AS(generate_scene(1, spec, tax, "img"), SpecInfeasible);
  spec = {};
  spec.persons = {1, 3};
  spec.width = 8;  // slots of 8/3 pixels cannot hold a person
  CHECK_THROWS_AS(generate_scene(1, spec, tax, "img"), SpecInfeasible);
  spec = {};
  spec.height = 3;
  spec.parts_per_person = {2, 4};
  CHECK_THROWS_AS(generate_scene(1, spec, tax, "img"), SpecInfeasible);
  spec = {};
  spec.characterizable_fraction = 1.5;
  CHECK_THROWS_AS(generate_scene(1, spec, tax, "img"), SpecInfeasible);
  spec = {};
  spec.parts_per_person = {0, 2};
  CHECK_THROWS_AS(generate_scene(1, spec, tax, "img"), SpecInfeasible);
}

TEST_CASE("perturbation is seeded and shape-safe") {
  const Taxonomy tax = default_taxonomy();
  PerturbationSpec p;
  p.seed = 9;
  p.mask_erosion = 1;
  p.score_noise = 0.3;
  p.drop_instance_prob = 0.25;
  p.relabel_prob = {0.5, 0.5, 0.5, 0.5};

  Scene a = generate_scene(55, SceneSpec{}, tax, "img");
  Scene b = generate_scene(55, SceneSpec{}, tax, "img");
  const std::size_t original_instances = a.pred.instances.size();
  perturb(a, p, tax);
  perturb(b, p, tax);

  REQUIRE(a.pred.instances.size() == b.pred.instances.size());
  CHECK(a.pred.instances.size() <= original_instances);
  for (std::size_t i = 0; i < a.pred.instances.size(); ++i) {
    CHECK(a.pred.instances[i].mask.counts == b.pred.instances[i].mask.counts);
    CHECK(a.pred.instances[i].score == b.pred.instances[i].score);
    CHECK(a.pred.instances[i].score >= 0.0);
    CHECK(a.pred.instances[i].score <= 1.0);
  }
  for (Task t : kSemanticTasks) {
    const LabelMap& m = a.pred.semantic[static_cast<int>(t)];
    CHECK(m.height() == a.gt.attribute.height());
    CHECK(same_grids(m, b.pred.semantic[static_cast<int>(t)]));
  }
  // The ground truth never changes.
  const Scene fresh = generate_scene(55, SceneSpec{}, tax, "img");
  for (Task t : kSemanticTasks) CHECK(same_grids(a.gt.map(t), fresh.gt.map(t)));
  CHECK(same_grids(a.gt.instance, fresh.gt.instance));
}

TEST_CASE("erosion strictly shrinks surviving masks") {
  const Taxonomy tax = default_taxonomy();
  PerturbationSpec p;
  p.seed = 3;
  p.mask_erosion = 1;
  Scene scene = generate_scene(77, SceneSpec{}, tax, "img");
  std::vector<std::int64_t> before;
  for (const auto& inst : scene.pred.instances) before.push_back(inst.mask.area());
  perturb(scene, p, tax);
  REQUIRE(scene.pred.instances.size() == before.size());  // no drops requested
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(scene.pred.instances[i].mask.area() < before[i]);
  }
  // Semantic foreground shrinks too, and stays inside the original.
  const Scene fresh = generate_scene(77, SceneSpec{}, tax, "img");
  for (Task t : kSemanticTasks) {
    const LabelGrid& eroded = scene.pred.semantic[static_cast<int>(t)].grid();
    const LabelGrid& full = fresh.pred.semantic[static_cast<int>(t)].grid();
    CHECK((eroded > 0).count() < (full > 0).count());
    for (int r = 0; r < eroded.rows(); ++r)
      for (int c = 0; c < eroded.cols(); ++c)
        if (eroded(r, c) != 0) CHECK(eroded(r, c) == full(r, c));
  }
}

TEST_CASE("dropping every instance empties the prediction list") {
  const Taxonomy tax = default_taxonomy();
  PerturbationSpec p;
  p.seed = 1;
  p.drop_instance_prob = 1.0;
  Scene scene = generate_scene(5, SceneSpec{}, tax, "img");
  perturb(scene, p, tax);
  CHECK(scene.pred.instances.empty());
  // Semantic rasters survive a pure drop untouched.
  const Scene fresh = generate_scene(5, SceneSpec{}, tax, "img");
  for (Task t : kSemanticTasks)
    CHECK(same_grids(scene.pred.semantic[static_cast<int>(t)],
                     fresh.pred.semantic[static_cast<int>(t)]));
}

TEST_CASE("fixtures round-trip through the dataset loaders") {
  const Taxonomy tax = default_taxonomy();
  TempDir dir("fixture");
  SceneSpec spec;
  spec.persons = {1, 2};
  PerturbationSpec p;
  p.seed = 0;  // per-image seeds come from the fixture seed
  p.mask_erosion = 1;
  p.score_noise = 0.1;
  const FixturePaths paths = write_fixture(dir.path, 3, 2024, spec, p, tax);

  CHECK(fs::exists(paths.manifest));
  CHECK(fs::exists(paths.taxonomy));
  CHECK(fs::exists(paths.truth));
  const DatasetManifest manifest = load_manifest(paths.manifest.string());
  REQUIRE(manifest.images.size() == 3);
  CHECK(manifest.images[0].id == "img_0000");
  CHECK(manifest.images[2].id == "img_0002");
  const Taxonomy loaded_tax = manifest_taxonomy(manifest);
  CHECK(loaded_tax.class_count(Task::attribute) == 19);

  for (const auto& entry : manifest.images) {
    const ImageSample sample = load_sample(manifest, entry, loaded_tax);
    CHECK(validate_sample(sample, loaded_tax).empty());
    const fs::path pred_path = paths.predictions / (entry.id + ".json");
    REQUIRE(fs::exists(pred_path));
    const ImagePrediction pred = load_prediction(pred_path.string(), loaded_tax,
                                                 sample.attribute.height(),
                                                 sample.attribute.width());
    CHECK(pred.image_id == entry.id);
    for (const auto& inst : pred.instances) {
      CHECK(inst.score >= 0.0);
      CHECK(inst.score <= 1.0);
    }
  }

  // The recorded truth matches an after-the-fact scan of the written rasters.
  const StatsReport scanned = scan_stats(manifest, loaded_tax, 2);
  std::ifstream truth_in(paths.truth);
  const std::string truth_bytes((std::istreambuf_iterator<char>(truth_in)),
                                std::istreambuf_iterator<char>());
  CHECK(dump_canonical(stats_to_json(scanned, loaded_tax)) == truth_bytes);

  // Same seed, same directory contents: fixture writing is reproducible.
  TempDir dir2("fixture2");
  write_fixture(dir2.path, 3, 2024, spec, p, tax);
  for (const auto& entry : fs::recursive_directory_iterator(dir.path)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), dir.path);
    std::ifstream f1(entry.path(), std::ios::binary), f2(dir2.path / rel, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)),
                         std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)),
                         std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
  }
}
