#include "ccihp/synth.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "ccihp/png_io.hpp"
#include "ccihp/report.hpp"

namespace ccihp {

namespace fs = std::filesystem;

namespace {

int pick_from(SplitMix64& rng, const std::vector<int>& pool) {
  return pool[rng.bounded(pool.size())];
}

// Chebyshev erosion of one class: a pixel stays labelled iff every pixel
// within radius r (image borders count as background) shares the label.
LabelGrid erode_classes(const LabelGrid& grid, int radius) {
  const int h = static_cast<int>(grid.rows()), w = static_cast<int>(grid.cols());
  LabelGrid out = LabelGrid::Zero(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::int32_t v = grid(y, x);
      if (v == 0) continue;
      bool keep = y - radius >= 0 && y + radius < h && x - radius >= 0 && x + radius < w;
      for (int dy = -radius; keep && dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          if (grid(y + dy, x + dx) != v) {
            keep = false;
            break;
          }
        }
      }
      if (keep) out(y, x) = v;
    }
  }
  return out;
}

std::vector<int> present_classes(const LabelGrid& grid) {
  std::vector<char> seen(256, 0);
  std::vector<int> out;
  const std::int32_t* p = grid.data();
  for (std::int64_t q = 0; q < grid.size(); ++q) {
    const std::int32_t v = p[q];
    if (v > 0 && v < 256 && !seen[v]) {
      seen[v] = 1;
      out.push_back(v);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

Scene generate_scene(std::uint64_t seed, const SceneSpec& spec, const Taxonomy& taxonomy,
                     const std::string& image_id, StatsReport* truth_accum) {
  if (spec.width <= 0 || spec.height <= 0) throw SpecInfeasible("scene: non-positive raster");
  if (spec.persons.lo < 0 || spec.persons.hi < spec.persons.lo) {
    throw SpecInfeasible("scene: bad person range");
  }
  if (spec.parts_per_person.lo < 1 || spec.parts_per_person.hi < spec.parts_per_person.lo) {
    throw SpecInfeasible("scene: bad part range");
  }
  if (spec.persons.hi > 0 && spec.width / spec.persons.hi < 4) {
    throw SpecInfeasible("scene: person slots narrower than 4 pixels");
  }
  if (spec.height < spec.parts_per_person.hi) {
    throw SpecInfeasible("scene: fewer rows than parts per person");
  }
  if (!(spec.characterizable_fraction >= 0.0 && spec.characterizable_fraction <= 1.0)) {
    throw SpecInfeasible("scene: characterizable fraction outside [0, 1]");
  }

  SplitMix64 rng(seed);
  const int width = spec.width, height = spec.height;
  const int attr_count = taxonomy.class_count(Task::attribute);

  std::vector<int> char_pool = taxonomy.characterizable_ids();
  std::vector<int> plain_pool;
  for (int a = 1; a <= attr_count; ++a) {
    if (!taxonomy.is_characterizable(a)) plain_pool.push_back(a);
  }
  std::vector<int> size_pool, hair_size_pool;
  for (int s = 1; s <= taxonomy.class_count(Task::size); ++s) {
    hair_size_pool.push_back(s);
    if (s != taxonomy.sparse_index()) size_pool.push_back(s);
  }

  Scene scene;
  scene.gt.id = image_id;
  std::array<LabelGrid, 5> grids;
  for (auto& g : grids) g = LabelGrid::Zero(height, width);

  const int span = spec.persons.hi - spec.persons.lo + 1;
  const int p = spec.persons.lo + static_cast<int>(rng.bounded(span));

  // this image's pixel tallies per semantic task, folded into truth at the end
  std::array<std::map<int, std::int64_t>, 4> tally;

  for (int person = 1; person <= p; ++person) {
    const int slot_w = width / p;
    const int slot_x = (person - 1) * slot_w;
    const int w = 3 + static_cast<int>(rng.bounded(slot_w - 3));  // [3, slot_w - 1]
    const int x0 = slot_x + static_cast<int>(rng.bounded(slot_w - w + 1));
    const int parts_span = spec.parts_per_person.hi - spec.parts_per_person.lo + 1;
    const int k = spec.parts_per_person.lo + static_cast<int>(rng.bounded(parts_span));
    const int h = k + static_cast<int>(rng.bounded(height - k + 1));
    const int y0 = static_cast<int>(rng.bounded(height - h + 1));

    grids[static_cast<int>(Task::instance)].block(y0, x0, h, w).setConstant(person);

    std::vector<char> used(attr_count + 1, 0);
    const int base = h / k, extra = h % k;
    int band_y = y0;
    for (int part = 0; part < k; ++part) {
      const int band_h = base + (part < extra ? 1 : 0);
      const std::int64_t band_area = static_cast<std::int64_t>(band_h) * w;

      const bool want_char = rng.real() < spec.characterizable_fraction;
      std::vector<int> candidates;
      for (int a : want_char ? char_pool : plain_pool) {
        if (!used[a]) candidates.push_back(a);
      }
      if (candidates.empty()) {
        for (int a = 1; a <= attr_count; ++a) {
          if (!used[a]) candidates.push_back(a);
        }
      }
      if (candidates.empty()) {
        throw SpecInfeasible("scene: more parts than attribute classes");
      }
      const int attr = pick_from(rng, candidates);
      used[attr] = 1;

      grids[static_cast<int>(Task::attribute)].block(band_y, x0, band_h, w).setConstant(attr);
      tally[static_cast<int>(Task::attribute)][attr] += band_area;

      if (taxonomy.is_characterizable(attr)) {
        const int size_id =
            pick_from(rng, attr == taxonomy.hair_index() ? hair_size_pool : size_pool);
        const int pattern_id =
            1 + static_cast<int>(rng.bounded(taxonomy.class_count(Task::pattern)));
        const int color_id =
            1 + static_cast<int>(rng.bounded(taxonomy.class_count(Task::color)));
        grids[static_cast<int>(Task::size)].block(band_y, x0, band_h, w).setConstant(size_id);
        grids[static_cast<int>(Task::pattern)]
            .block(band_y, x0, band_h, w)
            .setConstant(pattern_id);
        grids[static_cast<int>(Task::color)].block(band_y, x0, band_h, w).setConstant(color_id);
        tally[static_cast<int>(Task::size)][size_id] += band_area;
        tally[static_cast<int>(Task::pattern)][pattern_id] += band_area;
        tally[static_cast<int>(Task::color)][color_id] += band_area;
      }
      band_y += band_h;
    }
  }

  for (Task t : kSemanticTasks) {
    scene.gt.map(t) = LabelMap(t, grids[static_cast<int>(t)], taxonomy.class_count(t));
  }
  scene.gt.instance =
      LabelMap(Task::instance, std::move(grids[static_cast<int>(Task::instance)]), p);

  if (truth_accum) {
    truth_accum->images += 1;
    truth_accum->per_split["val"] += 1;
    truth_accum->instances_total += p;
    truth_accum->people_histogram[p] += 1;
    for (Task t : kSemanticTasks) {
      for (const auto& [cls, pixels] : tally[static_cast<int>(t)]) {
        truth_accum->pixels_per_class[static_cast<int>(t)][cls] += pixels;
        truth_accum->images_per_label[static_cast<int>(t)][cls] += 1;
      }
    }
  }

  // the prediction starts as a faithful copy of the truth
  scene.pred.image_id = image_id;
  scene.pred.height = height;
  scene.pred.width = width;
  const auto& inst = scene.gt.instance.grid();
  std::vector<RleBuilder> builders(p, RleBuilder(height, width));
  const std::int32_t* pi = inst.data();
  for (std::int64_t q = 0; q < inst.size(); ++q) {
    if (pi[q] > 0) builders[pi[q] - 1].add(q);
  }
  for (auto& builder : builders) scene.pred.instances.push_back({1.0, builder.finish()});
  for (Task t : kSemanticTasks) {
    scene.pred.semantic[static_cast<int>(t)] =
        LabelMap(t, scene.gt.map(t).grid(), taxonomy.class_count(t));
  }
  return scene;
}

void perturb(Scene& scene, const PerturbationSpec& spec, const Taxonomy& taxonomy) {
  SplitMix64 rng(spec.seed);
  ImagePrediction& pred = scene.pred;

  if (spec.drop_instance_prob > 0.0) {
    std::vector<PredictedInstance> kept;
    for (auto& inst : pred.instances) {
      if (rng.real() >= spec.drop_instance_prob) kept.push_back(std::move(inst));
    }
    pred.instances = std::move(kept);
  }

  if (spec.mask_erosion > 0) {
    for (auto& inst : pred.instances) {
      const BinaryMask mask = rle_decode(inst.mask);
      LabelGrid grid = mask.grid().cast<std::int32_t>();
      inst.mask = rle_encode(BinaryMask((erode_classes(grid, spec.mask_erosion) != 0).eval()));
    }
    for (Task t : kSemanticTasks) {
      LabelMap& map = pred.semantic[static_cast<int>(t)];
      map = LabelMap(t, erode_classes(map.grid(), spec.mask_erosion), map.max_index());
    }
  }

  for (Task t : kSemanticTasks) {
    const double prob = spec.relabel_prob[static_cast<int>(t)];
    if (prob <= 0.0) continue;
    LabelMap& map = pred.semantic[static_cast<int>(t)];
    const int count = taxonomy.class_count(t);
    std::vector<std::int32_t> remap(count + 1);
    for (int c = 0; c <= count; ++c) remap[c] = c;
    bool changed = false;
    for (int c : present_classes(map.grid())) {
      if (rng.real() < prob) {
        remap[c] = 1 + static_cast<std::int32_t>(rng.bounded(count));
        changed = changed || remap[c] != c;
      }
    }
    if (changed) {
      LabelGrid grid = map.grid();
      std::int32_t* pv = grid.data();
      for (std::int64_t q = 0; q < grid.size(); ++q) pv[q] = remap[pv[q]];
      map = LabelMap(t, std::move(grid), count);
    }
  }

  if (spec.score_noise > 0.0) {
    for (auto& inst : pred.instances) {
      inst.score = std::clamp(inst.score + rng.gaussian() * spec.score_noise, 0.0, 1.0);
    }
  }
}

FixturePaths write_fixture(const fs::path& dir, int images, std::uint64_t seed,
                           const SceneSpec& scene_spec,
                           const std::optional<PerturbationSpec>& perturbation,
                           const Taxonomy& taxonomy) {
  fs::create_directories(dir / "rasters");
  fs::create_directories(dir / "predictions");

  FixturePaths paths;
  paths.root = dir;
  paths.manifest = dir / "manifest.json";
  paths.taxonomy = dir / "taxonomy.json";
  paths.predictions = dir / "predictions";
  paths.truth = dir / "truth.json";

  {
    std::ofstream out(paths.taxonomy);
    out << taxonomy_to_json(taxonomy).dump(2) << "\n";
  }

  SplitMix64 seeder(seed);
  StatsReport truth;
  nlohmann::ordered_json manifest;
  manifest["root"] = "";
  manifest["taxonomy"] = "taxonomy.json";
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();

  for (int i = 0; i < images; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "img_%04d", i);
    const std::uint64_t scene_seed = seeder.next();
    const std::uint64_t perturb_seed = seeder.next();
    Scene scene = generate_scene(scene_seed, scene_spec, taxonomy, id, &truth);
    if (perturbation) {
      PerturbationSpec per_image = *perturbation;
      per_image.seed = perturb_seed;
      perturb(scene, per_image, taxonomy);
    }

    nlohmann::ordered_json entry;
    entry["id"] = id;
    entry["split"] = "val";
    for (Task t : kSemanticTasks) {
      const std::string rel = std::string("rasters/") + id + "_" + to_string(t) + ".png";
      write_png_indexed8((dir / rel).string(), scene.gt.map(t).grid());
      entry[to_string(t)] = rel;
    }
    const std::string inst_rel = std::string("rasters/") + id + "_instance.png";
    write_png_gray16((dir / inst_rel).string(), scene.gt.instance.grid());
    entry["instance"] = inst_rel;
    entries.push_back(std::move(entry));

    std::ofstream out(paths.predictions / (std::string(id) + ".json"));
    out << prediction_to_json(scene.pred).dump(2) << "\n";
  }

  manifest["images"] = std::move(entries);
  {
    std::ofstream out(paths.manifest);
    out << manifest.dump(2) << "\n";
  }
  {
    std::ofstream out(paths.truth);
    out << dump_canonical(stats_to_json(truth, taxonomy));
  }
  return paths;
}

}  // namespace ccihp
