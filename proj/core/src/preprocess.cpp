#include "taco/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace taco {

bool PreprocessStats::matches(const Table& table) const {
    if (columns.size() != table.schema.size()) return false;
    for (std::size_t c = 0; c < columns.size(); ++c) {
        if (columns[c].name != table.schema[c].name) return false;
        if (columns[c].kind != table.schema[c].kind) return false;
    }
    return true;
}

namespace {

Table apply(const Table& table, const PreprocessStats& stats) {
    Table out = table;
    const std::int64_t m = table.n_features();
    for (std::int64_t c = 0; c < m; ++c) {
        const auto& col = stats.columns[static_cast<std::size_t>(c)];
        if (col.kind == ColKind::numeric) {
            for (std::int64_t r = 0; r < table.n_rows; ++r) {
                double v = table.cell(r, c);
                if (std::isnan(v)) v = col.mean;
                out.cell(r, c) = col.stddev > 0.0 ? (v - col.mean) / col.stddev : 0.0;
            }
        } else {
            // Re-encode against the fitted map; the source table's own map may
            // differ (test split seen categories in a different order).
            const auto& src_cats = table.schema[static_cast<std::size_t>(c)].categories;
            const auto reserved = static_cast<double>(col.categories.size());
            for (std::int64_t r = 0; r < table.n_rows; ++r) {
                const double v = table.cell(r, c);
                if (std::isnan(v)) {
                    out.cell(r, c) = reserved;
                    continue;
                }
                const auto src_id = static_cast<std::size_t>(v);
                const std::string& name =
                    src_id < src_cats.size() ? src_cats[src_id] : std::string();
                const auto it = std::find(col.categories.begin(), col.categories.end(), name);
                out.cell(r, c) =
                    it == col.categories.end() ? reserved
                                               : static_cast<double>(it - col.categories.begin());
            }
            out.schema[static_cast<std::size_t>(c)].categories = col.categories;
        }
    }
    out.preprocessed = true;
    return out;
}

}  // namespace

std::pair<Table, PreprocessStats> preprocess(const Table& table) {
    table.validate();
    PreprocessStats stats;
    const std::int64_t m = table.n_features();
    stats.columns.resize(static_cast<std::size_t>(m));
    for (std::int64_t c = 0; c < m; ++c) {
        auto& col = stats.columns[static_cast<std::size_t>(c)];
        const auto& schema = table.schema[static_cast<std::size_t>(c)];
        col.name = schema.name;
        col.kind = schema.kind;
        if (schema.kind == ColKind::numeric) {
            double sum = 0.0;
            std::int64_t n = 0;
            for (std::int64_t r = 0; r < table.n_rows; ++r) {
                const double v = table.cell(r, c);
                if (!std::isnan(v)) {
                    sum += v;
                    ++n;
                }
            }
            col.mean = n > 0 ? sum / static_cast<double>(n) : 0.0;
            double ss = 0.0;
            for (std::int64_t r = 0; r < table.n_rows; ++r) {
                const double v = table.cell(r, c);
                if (!std::isnan(v)) ss += (v - col.mean) * (v - col.mean);
            }
            col.stddev = n > 0 ? std::sqrt(ss / static_cast<double>(n)) : 0.0;
        } else {
            col.categories = schema.categories;
        }
    }
    return {apply(table, stats), stats};
}

Table preprocess(const Table& table, const PreprocessStats& stats) {
    table.validate();
    if (!stats.matches(table))
        throw DataError("preprocess: table schema does not match fitted statistics");
    return apply(table, stats);
}

}  // namespace taco
