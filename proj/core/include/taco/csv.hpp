#pragma once

#include <optional>
#include <string>
#include <vector>

#include "taco/table.hpp"

namespace taco {

struct CsvHints {
    // Column name -> kind override. Columns not listed are inferred: a column
    // is numeric iff every non-missing cell parses as a double.
    std::vector<std::pair<std::string, ColKind>> kinds;
    // Name of the target column; empty = no target.
    std::string target;
};

// Reads a headered CSV into a Table. Empty cells are recorded as missing
// (NaN for numeric columns). Throws DataError on ragged rows, an empty file,
// or a target column whose values don't form class labels.
Table load_csv(const std::string& path, const CsvHints& hints = {});

// Writes the table (features plus target column when present) back to CSV.
void save_csv(const Table& table, const std::string& path,
              const std::string& target_name = "target");

}  // namespace taco
