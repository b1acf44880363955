#pragma once

#include <stdexcept>

namespace ccihp {

// Base for every error thrown by this library. Catch this to map any
// domain failure to a CLI input-error exit.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raster/mask geometry disagreements (width/height).
struct DimensionMismatch : Error { using Error::Error; };
// Label value outside the declared class range of a map or catalog.
struct ClassOutOfRange : Error { using Error::Error; };
// RLE counts do not sum to height*width.
struct CountsMismatch : Error { using Error::Error; };
// RLE violates the canonical form (interior zero run, negative run).
struct NonCanonical : Error { using Error::Error; };
// Structural problem in a JSON document (taxonomy, manifest, prediction).
struct SchemaError : Error { using Error::Error; };
// Confusion matrices of different size/task cannot merge.
struct ShapeMismatch : Error { using Error::Error; };
// greedy_match fed units of more than one class.
struct MixedClasses : Error { using Error::Error; };
// average_precision over a class with zero ground-truth units.
struct NoGroundTruth : Error { using Error::Error; };
// mean over a policy set in which every class is undefined.
struct AllUndefined : Error { using Error::Error; };
// person_match_score where neither person has any foreground part.
struct BothEmpty : Error { using Error::Error; };
// characterized-unit extraction asked for a non-characteristic task.
struct NotACharacteristicTask : Error { using Error::Error; };
// scene spec whose rectangles cannot fit the requested image.
struct SpecInfeasible : Error { using Error::Error; };
// file missing/unreadable/corrupt.
struct IoError : Error { using Error::Error; };
// bad CLI/config values (unknown task name, bad threshold range, ...).
struct ConfigError : Error { using Error::Error; };

}  // namespace ccihp
