#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "ccihp/dataset.hpp"
#include "ccihp/eval_runner.hpp"
#include "ccihp/taxonomy.hpp"

namespace ccihp {

// Deterministic serialization: key order is insertion order, non-finite
// numbers become null, trailing newline. Two equal documents always yield
// the same bytes, so reports can be compared byte-for-byte.
std::string dump_canonical(const nlohmann::ordered_json& doc);

nlohmann::ordered_json ap_report_to_json(const ApReport& report, const Taxonomy& taxonomy);
nlohmann::ordered_json report_to_json(const EvalReport& report, const Taxonomy& taxonomy,
                                      const EvalConfig& config);
nlohmann::ordered_json stats_to_json(const StatsReport& stats, const Taxonomy& taxonomy);
nlohmann::ordered_json validation_to_json(const ValidationReport& report);

// Fixed-width per-task blocks; "all" column first, then per-class columns
// under display names. Cells are percentages at one decimal, "-" where the
// metric is undefined.
std::string render_table(const EvalReport& report, const Taxonomy& taxonomy,
                         MeanPolicy policy);

}  // namespace ccihp
