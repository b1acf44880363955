#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ccihp/errors.hpp"
#include "ccihp/maskcore.hpp"

namespace ccihp {

// Class catalog for one task: names are 1-based (0 is background everywhere).
struct TaskCatalog {
  Task task = Task::attribute;
  int class_count = 0;
  std::vector<std::string> names;
};

// CCIHP label catalog: 19 attribute classes plus the three characteristic
// tasks (4 sizes, 4 patterns, 12 colors) and the subset of attributes that
// carry characteristics.
class Taxonomy {
 public:
  Taxonomy(std::vector<std::string> attributes, std::vector<std::string> sizes,
           std::vector<std::string> patterns, std::vector<std::string> colors,
           std::vector<int> characterizable_ids, const std::string& hair_name,
           const std::string& sparse_name);

  int class_count(Task task) const;                      // excludes background
  const std::vector<std::string>& names(Task task) const;
  const std::string& class_name(Task task, int class_id) const;  // 1-based
  int find_class(Task task, const std::string& name) const;      // 0 when absent
  TaskCatalog catalog(Task task) const;

  // Attribute ids (1-based, ascending) that carry size/pattern/color.
  const std::vector<int>& characterizable_ids() const { return characterizable_ids_; }
  bool is_characterizable(int attribute_id) const;  // throws ClassOutOfRange

  int hair_index() const { return hair_index_; }      // attribute id
  int sparse_index() const { return sparse_index_; }  // size class id

 private:
  std::vector<std::string> attributes_, sizes_, patterns_, colors_;
  std::vector<int> characterizable_ids_;
  std::vector<bool> characterizable_flags_;  // indexed by attribute id
  int hair_index_ = 0;
  int sparse_index_ = 0;
};

// Free-function form of the membership test.
bool characterizable(const Taxonomy& taxonomy, int attribute_id);

// The stock CCIHP catalog.
Taxonomy default_taxonomy();

// Catalog document: {"attributes": [...19...], "sizes": [...4...],
// "patterns": [...4...], "colors": [...12...], "characterizable": [names],
// "hair": name?, "sparse": name?}. Throws SchemaError on wrong counts,
// duplicate names, unresolvable references, or a hair class that is not
// characterizable.
Taxonomy load_taxonomy(const nlohmann::json& doc);
Taxonomy load_taxonomy_file(const std::string& path);
nlohmann::json taxonomy_to_json(const Taxonomy& taxonomy);

// Column label used by table output ("Short/small" -> "Short",
// "Undetermined" -> "Undet.", "Geometrical" -> "Geom.", rest verbatim).
std::string display_name(const std::string& class_name);

}  // namespace ccihp
