#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "taco/errors.hpp"

namespace taco {

// Label sentinels. MISSING_TARGET marks test rows fed to the predictor;
// MASK_PLACEHOLDER marks the compressor's dummy rows. They embed to distinct
// learned vectors and must never collide with a real class id.
inline constexpr int kMissingTarget = -1;
inline constexpr int kMaskPlaceholder = -2;

enum class ColKind { numeric, categorical };

struct ColumnSchema {
    std::string name;
    ColKind kind = ColKind::numeric;
    // Categorical columns: position = ordinal id assigned at preprocessing.
    std::vector<std::string> categories;
};

// Rectangular N x M feature matrix plus one optional target column.
//
// All cells are stored as doubles: numeric columns hold the raw or z-scored
// value, categorical columns hold the ordinal id. Missing numeric cells are
// NaN until preprocessing imputes them.
struct Table {
    std::vector<ColumnSchema> schema;
    std::int64_t n_rows = 0;
    std::vector<double> cells;  // row-major, n_rows x n_features
    std::vector<int> labels;    // empty, or one entry per row (class id or sentinel)
    int num_classes = 0;
    bool preprocessed = false;

    std::int64_t n_features() const { return static_cast<std::int64_t>(schema.size()); }

    double cell(std::int64_t row, std::int64_t col) const {
        return cells[static_cast<std::size_t>(row * n_features() + col)];
    }
    double& cell(std::int64_t row, std::int64_t col) {
        return cells[static_cast<std::size_t>(row * n_features() + col)];
    }

    bool has_labels() const { return !labels.empty(); }

    // Throws DataError if the invariants don't hold (rectangularity, label
    // range, category ids within the map).
    void validate() const;

    // Row subset in the given order; labels follow when present.
    Table select_rows(const std::vector<std::int64_t>& rows) const;

    // FNV-1a over schema and cell/label bytes; used as the provenance
    // fingerprint of compressed contexts.
    std::uint64_t fingerprint() const;
};

}  // namespace taco
