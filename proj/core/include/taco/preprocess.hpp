#pragma once

#include <string>
#include <vector>

#include "taco/table.hpp"

namespace taco {

// Train-split statistics reused verbatim on test batches.
struct PreprocessStats {
    struct Column {
        std::string name;
        ColKind kind = ColKind::numeric;
        double mean = 0.0;
        double stddev = 1.0;                  // 0 marks a constant column
        std::vector<std::string> categories;  // ordinal id = position
    };
    std::vector<Column> columns;

    bool matches(const Table& table) const;
};

// Fits stats on `table` and returns the transformed copy: numerics z-scored
// (constant columns map to 0), missing numerics imputed with the column mean,
// categoricals ordinal-encoded. Unseen categories at apply time get the
// reserved id `categories.size()`.
std::pair<Table, PreprocessStats> preprocess(const Table& table);

// Applies previously fitted stats. Throws DataError on schema mismatch.
Table preprocess(const Table& table, const PreprocessStats& stats);

}  // namespace taco
