#include "taco/csv.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace taco {

namespace {

// RFC-4180-ish: quoted fields may contain commas and doubled quotes.
std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

bool parse_double(const std::string& s, double& out) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    while (first != last && (*first == ' ' || *first == '\t')) ++first;
    while (last != first && (*(last - 1) == ' ' || *(last - 1) == '\t')) --last;
    if (first == last) return false;
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc{} && ptr == last;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string quote_if_needed(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += "\"\"";
        out += ch;
    }
    out += '"';
    return out;
}

}  // namespace

Table load_csv(const std::string& path, const CsvHints& hints) {
    std::ifstream in(path);
    if (!in) throw IoError("load_csv: cannot open '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw DataError("load_csv: empty file '" + path + "'");
    const std::vector<std::string> header = split_csv_line(line);

    std::vector<std::vector<std::string>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != header.size())
            throw DataError("load_csv: ragged row at line " + std::to_string(line_no) + " (" +
                            std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(header.size()) + ")");
        rows.push_back(std::move(fields));
    }
    if (rows.empty()) throw DataError("load_csv: no data rows in '" + path + "'");

    std::size_t target_col = header.size();
    if (!hints.target.empty()) {
        for (std::size_t c = 0; c < header.size(); ++c)
            if (header[c] == hints.target) target_col = c;
        if (target_col == header.size())
            throw DataError("load_csv: target column '" + hints.target + "' not found");
    }

    Table table;
    table.n_rows = static_cast<std::int64_t>(rows.size());

    for (std::size_t c = 0; c < header.size(); ++c) {
        if (c == target_col) continue;
        ColumnSchema col;
        col.name = header[c];

        std::optional<ColKind> hinted;
        for (const auto& [name, kind] : hints.kinds)
            if (name == col.name) hinted = kind;

        bool numeric = true;
        if (hinted) {
            numeric = *hinted == ColKind::numeric;
        } else {
            for (const auto& row : rows) {
                double v;
                if (!row[c].empty() && !parse_double(row[c], v)) {
                    numeric = false;
                    break;
                }
            }
        }
        col.kind = numeric ? ColKind::numeric : ColKind::categorical;
        table.schema.push_back(std::move(col));
    }

    table.cells.resize(rows.size() * table.schema.size());
    std::size_t out_c = 0;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (c == target_col) continue;
        ColumnSchema& col = table.schema[out_c];
        if (col.kind == ColKind::numeric) {
            for (std::size_t r = 0; r < rows.size(); ++r) {
                double v = std::numeric_limits<double>::quiet_NaN();
                if (!rows[r][c].empty() && !parse_double(rows[r][c], v))
                    throw DataError("load_csv: non-numeric cell '" + rows[r][c] +
                                    "' in numeric column '" + col.name + "'");
                table.cells[r * table.schema.size() + out_c] = v;
            }
        } else {
            std::map<std::string, int> seen;
            for (std::size_t r = 0; r < rows.size(); ++r) {
                if (rows[r][c].empty()) {
                    table.cells[r * table.schema.size() + out_c] =
                        std::numeric_limits<double>::quiet_NaN();
                    continue;
                }
                auto [it, inserted] = seen.emplace(rows[r][c], static_cast<int>(col.categories.size()));
                if (inserted) col.categories.push_back(rows[r][c]);
                table.cells[r * table.schema.size() + out_c] = static_cast<double>(it->second);
            }
        }
        ++out_c;
    }

    if (target_col < header.size()) {
        // Distinct target values become class ids; numeric values sort
        // numerically, otherwise lexicographically.
        std::vector<std::string> distinct;
        for (const auto& row : rows)
            if (!row[target_col].empty() &&
                std::find(distinct.begin(), distinct.end(), row[target_col]) == distinct.end())
                distinct.push_back(row[target_col]);
        if (distinct.empty())
            throw DataError("load_csv: target column '" + header[target_col] + "' has no values");
        bool all_numeric = true;
        for (const auto& v : distinct) {
            double d;
            all_numeric = all_numeric && parse_double(v, d);
        }
        std::sort(distinct.begin(), distinct.end(), [&](const std::string& a, const std::string& b) {
            if (all_numeric) {
                double da, db;
                parse_double(a, da);
                parse_double(b, db);
                return da < db;
            }
            return a < b;
        });
        table.num_classes = static_cast<int>(distinct.size());
        table.labels.reserve(rows.size());
        for (const auto& row : rows) {
            if (row[target_col].empty()) {
                table.labels.push_back(kMissingTarget);
                continue;
            }
            const auto it = std::find(distinct.begin(), distinct.end(), row[target_col]);
            table.labels.push_back(static_cast<int>(it - distinct.begin()));
        }
    }

    table.validate();
    return table;
}

void save_csv(const Table& table, const std::string& path, const std::string& target_name) {
    std::ofstream out(path);
    if (!out) throw IoError("save_csv: cannot open '" + path + "' for writing");

    for (std::size_t c = 0; c < table.schema.size(); ++c) {
        if (c) out << ',';
        out << quote_if_needed(table.schema[c].name);
    }
    if (table.has_labels()) out << (table.schema.empty() ? "" : ",") << quote_if_needed(target_name);
    out << '\n';

    for (std::int64_t r = 0; r < table.n_rows; ++r) {
        for (std::int64_t c = 0; c < table.n_features(); ++c) {
            if (c) out << ',';
            const double v = table.cell(r, c);
            const auto& col = table.schema[static_cast<std::size_t>(c)];
            if (std::isnan(v)) continue;  // missing -> empty field
            if (col.kind == ColKind::categorical) {
                const auto id = static_cast<std::size_t>(v);
                if (id < col.categories.size()) out << quote_if_needed(col.categories[id]);
            } else {
                out << format_double(v);
            }
        }
        if (table.has_labels()) {
            out << ',';
            const int y = table.labels[static_cast<std::size_t>(r)];
            if (y >= 0) out << y;
        }
        out << '\n';
    }
    if (!out) throw IoError("save_csv: write failed for '" + path + "'");
}

}  // namespace taco
