#include "taco/table.hpp"

#include <cmath>
#include <cstring>

namespace taco {

void Table::validate() const {
    if (cells.size() != static_cast<std::size_t>(n_rows * n_features()))
        throw DataError("table: cell storage is not rectangular");
    if (!labels.empty()) {
        if (static_cast<std::int64_t>(labels.size()) != n_rows)
            throw DataError("table: label column length mismatch");
        for (int y : labels) {
            if (y != kMissingTarget && y != kMaskPlaceholder && (y < 0 || y >= num_classes))
                throw DataError("table: label " + std::to_string(y) + " outside [0," +
                                std::to_string(num_classes) + ")");
        }
    }
    for (std::size_t c = 0; c < schema.size(); ++c) {
        if (schema[c].kind != ColKind::categorical) continue;
        const auto n_cat = static_cast<double>(schema[c].categories.size());
        for (std::int64_t r = 0; r < n_rows; ++r) {
            const double v = cell(r, static_cast<std::int64_t>(c));
            if (std::isnan(v)) continue;  // missing, resolved during preprocessing
            // One extra id is reserved for unseen categories.
            if (v < 0 || v > n_cat)
                throw DataError("table: category id " + std::to_string(v) +
                                " outside map of column '" + schema[c].name + "'");
        }
    }
}

Table Table::select_rows(const std::vector<std::int64_t>& rows) const {
    Table out;
    out.schema = schema;
    out.n_rows = static_cast<std::int64_t>(rows.size());
    out.num_classes = num_classes;
    out.preprocessed = preprocessed;
    out.cells.reserve(rows.size() * static_cast<std::size_t>(n_features()));
    for (std::int64_t r : rows) {
        if (r < 0 || r >= n_rows) throw DataError("select_rows: index out of range");
        for (std::int64_t c = 0; c < n_features(); ++c) out.cells.push_back(cell(r, c));
    }
    if (!labels.empty()) {
        out.labels.reserve(rows.size());
        for (std::int64_t r : rows) out.labels.push_back(labels[static_cast<std::size_t>(r)]);
    }
    return out;
}

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv_bytes(std::uint64_t& h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
}

}  // namespace

std::uint64_t Table::fingerprint() const {
    std::uint64_t h = kFnvOffset;
    for (const auto& col : schema) {
        fnv_bytes(h, col.name.data(), col.name.size());
        const int kind = static_cast<int>(col.kind);
        fnv_bytes(h, &kind, sizeof(kind));
        for (const auto& cat : col.categories) fnv_bytes(h, cat.data(), cat.size());
    }
    fnv_bytes(h, &n_rows, sizeof(n_rows));
    fnv_bytes(h, cells.data(), cells.size() * sizeof(double));
    if (!labels.empty()) fnv_bytes(h, labels.data(), labels.size() * sizeof(int));
    fnv_bytes(h, &num_classes, sizeof(num_classes));
    return h;
}

}  // namespace taco
