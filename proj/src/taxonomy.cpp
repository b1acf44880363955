#include "ccihp/taxonomy.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

namespace ccihp {

namespace {

constexpr int kAttributeCount = 19;
constexpr int kSizeCount = 4;
constexpr int kPatternCount = 4;
constexpr int kColorCount = 12;

void require_unique(const std::vector<std::string>& names, const char* what) {
  std::set<std::string> seen(names.begin(), names.end());
  if (seen.size() != names.size()) {
    throw SchemaError(std::string("taxonomy: duplicate name in ") + what);
  }
}

std::vector<std::string> string_list(const nlohmann::json& doc, const char* key,
                                     std::size_t expected) {
  if (!doc.contains(key) || !doc[key].is_array()) {
    throw SchemaError(std::string("taxonomy: missing list '") + key + "'");
  }
  std::vector<std::string> out;
  for (const auto& v : doc[key]) {
    if (!v.is_string()) throw SchemaError(std::string("taxonomy: non-string entry in ") + key);
    out.push_back(v.get<std::string>());
  }
  if (out.size() != expected) {
    throw SchemaError(std::string("taxonomy: '") + key + "' must list " +
                      std::to_string(expected) + " classes, got " + std::to_string(out.size()));
  }
  return out;
}

}  // namespace

Taxonomy::Taxonomy(std::vector<std::string> attributes, std::vector<std::string> sizes,
                   std::vector<std::string> patterns, std::vector<std::string> colors,
                   std::vector<int> characterizable_ids, const std::string& hair_name,
                   const std::string& sparse_name)
    : attributes_(std::move(attributes)),
      sizes_(std::move(sizes)),
      patterns_(std::move(patterns)),
      colors_(std::move(colors)),
      characterizable_ids_(std::move(characterizable_ids)) {
  if (attributes_.size() != kAttributeCount || sizes_.size() != kSizeCount ||
      patterns_.size() != kPatternCount || colors_.size() != kColorCount) {
    throw SchemaError("taxonomy: class counts must be 19 attributes, 4 sizes, 4 patterns, "
                      "12 colors");
  }
  require_unique(attributes_, "attributes");
  require_unique(sizes_, "sizes");
  require_unique(patterns_, "patterns");
  require_unique(colors_, "colors");

  std::sort(characterizable_ids_.begin(), characterizable_ids_.end());
  characterizable_flags_.assign(attributes_.size() + 1, false);
  int prev = 0;
  for (int id : characterizable_ids_) {
    if (id < 1 || id > static_cast<int>(attributes_.size())) {
      throw SchemaError("taxonomy: characterizable id out of range");
    }
    if (id == prev) throw SchemaError("taxonomy: duplicate characterizable id");
    prev = id;
    characterizable_flags_[id] = true;
  }

  hair_index_ = find_class(Task::attribute, hair_name);
  if (hair_index_ == 0) throw SchemaError("taxonomy: hair class '" + hair_name + "' not found");
  sparse_index_ = find_class(Task::size, sparse_name);
  if (sparse_index_ == 0) {
    throw SchemaError("taxonomy: sparse size class '" + sparse_name + "' not found");
  }
  if (!characterizable_flags_[hair_index_]) {
    throw SchemaError("taxonomy: hair class must be characterizable");
  }
}

int Taxonomy::class_count(Task task) const { return static_cast<int>(names(task).size()); }

const std::vector<std::string>& Taxonomy::names(Task task) const {
  switch (task) {
    case Task::attribute: return attributes_;
    case Task::size: return sizes_;
    case Task::pattern: return patterns_;
    case Task::color: return colors_;
    case Task::instance: break;
  }
  throw ConfigError("taxonomy: the instance task has no class catalog");
}

const std::string& Taxonomy::class_name(Task task, int class_id) const {
  const auto& list = names(task);
  if (class_id < 1 || class_id > static_cast<int>(list.size())) {
    throw ClassOutOfRange("taxonomy: class " + std::to_string(class_id) + " outside " +
                          to_string(task) + " catalog");
  }
  return list[class_id - 1];
}

int Taxonomy::find_class(Task task, const std::string& name) const {
  const auto& list = names(task);
  for (std::size_t i = 0; i < list.size(); ++i) {
    if (list[i] == name) return static_cast<int>(i) + 1;
  }
  return 0;
}

TaskCatalog Taxonomy::catalog(Task task) const {
  return TaskCatalog{task, class_count(task), names(task)};
}

bool Taxonomy::is_characterizable(int attribute_id) const {
  if (attribute_id < 1 || attribute_id > static_cast<int>(attributes_.size())) {
    throw ClassOutOfRange("taxonomy: attribute id " + std::to_string(attribute_id) +
                          " outside catalog");
  }
  return characterizable_flags_[attribute_id];
}

bool characterizable(const Taxonomy& taxonomy, int attribute_id) {
  return taxonomy.is_characterizable(attribute_id);
}

Taxonomy default_taxonomy() {
  std::vector<std::string> attributes = {
      "Hat", "Hair", "Glove", "Glasses", "UpperClothes", "Mask", "Coat", "Socks", "Pants",
      "Torso-skin", "Scarf/Tie", "Skirt", "Face", "L-arm", "R-arm", "L-leg", "R-Leg",
      "L-shoe", "R-shoe"};
  std::vector<std::string> sizes = {"Short/small", "Long/large", "Undetermined", "Sparse/bald"};
  std::vector<std::string> patterns = {"Solid", "Geometrical", "Fancy", "Letters"};
  std::vector<std::string> colors = {"Dark", "Medium", "Light", "Brown", "Red", "Pink",
                                     "Yellow", "Orange", "Green", "Blue", "Purple",
                                     "Multicolor"};
  // Clothing and worn accessories carry size/pattern/color; body parts do not.
  const std::vector<std::string> characterizable_names = {
      "Hat", "Hair", "Glove", "Glasses", "UpperClothes", "Mask", "Coat", "Socks", "Pants",
      "Scarf/Tie", "Skirt", "L-shoe", "R-shoe"};
  std::vector<int> ids;
  for (const auto& name : characterizable_names) {
    for (std::size_t i = 0; i < attributes.size(); ++i) {
      if (attributes[i] == name) ids.push_back(static_cast<int>(i) + 1);
    }
  }
  return Taxonomy(std::move(attributes), std::move(sizes), std::move(patterns),
                  std::move(colors), std::move(ids), "Hair", "Sparse/bald");
}

Taxonomy load_taxonomy(const nlohmann::json& doc) {
  if (!doc.is_object()) throw SchemaError("taxonomy: document must be a JSON object");
  auto attributes = string_list(doc, "attributes", kAttributeCount);
  auto sizes = string_list(doc, "sizes", kSizeCount);
  auto patterns = string_list(doc, "patterns", kPatternCount);
  auto colors = string_list(doc, "colors", kColorCount);

  if (!doc.contains("characterizable") || !doc["characterizable"].is_array()) {
    throw SchemaError("taxonomy: missing list 'characterizable'");
  }
  std::vector<int> ids;
  for (const auto& v : doc["characterizable"]) {
    if (!v.is_string()) throw SchemaError("taxonomy: non-string entry in characterizable");
    const std::string name = v.get<std::string>();
    const auto it = std::find(attributes.begin(), attributes.end(), name);
    if (it == attributes.end()) {
      throw SchemaError("taxonomy: characterizable class '" + name + "' not an attribute");
    }
    ids.push_back(static_cast<int>(it - attributes.begin()) + 1);
  }

  const std::string hair = doc.value("hair", std::string("Hair"));
  const std::string sparse = doc.value("sparse", std::string("Sparse/bald"));
  return Taxonomy(std::move(attributes), std::move(sizes), std::move(patterns),
                  std::move(colors), std::move(ids), hair, sparse);
}

Taxonomy load_taxonomy_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open taxonomy file: " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("taxonomy: invalid JSON in " + path + ": " + e.what());
  }
  return load_taxonomy(doc);
}

nlohmann::json taxonomy_to_json(const Taxonomy& taxonomy) {
  nlohmann::json doc;
  doc["attributes"] = taxonomy.names(Task::attribute);
  doc["sizes"] = taxonomy.names(Task::size);
  doc["patterns"] = taxonomy.names(Task::pattern);
  doc["colors"] = taxonomy.names(Task::color);
  std::vector<std::string> characterizable_names;
  for (int id : taxonomy.characterizable_ids()) {
    characterizable_names.push_back(taxonomy.class_name(Task::attribute, id));
  }
  doc["characterizable"] = characterizable_names;
  doc["hair"] = taxonomy.class_name(Task::attribute, taxonomy.hair_index());
  doc["sparse"] = taxonomy.class_name(Task::size, taxonomy.sparse_index());
  return doc;
}

std::string display_name(const std::string& class_name) {
  if (class_name == "Short/small") return "Short";
  if (class_name == "Long/large") return "Long";
  if (class_name == "Sparse/bald") return "Sparse";
  if (class_name == "Undetermined") return "Undet.";
  if (class_name == "Geometrical") return "Geom.";
  return class_name;
}

}  // namespace ccihp
