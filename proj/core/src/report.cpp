#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "taco/bench.hpp"

namespace taco {

namespace {

std::string fmt(double v, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

// Fixed five-stop blue->red ramp over normalized [0,1].
std::string ramp_color(double t) {
    static const int stops[5][3] = {
        {49, 54, 149}, {116, 173, 209}, {255, 255, 191}, {244, 109, 67}, {165, 0, 38}};
    t = std::clamp(t, 0.0, 1.0);
    const double x = t * 4.0;
    const int i = std::min(3, static_cast<int>(x));
    const double f = x - i;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x",
                  static_cast<int>(stops[i][0] + f * (stops[i + 1][0] - stops[i][0])),
                  static_cast<int>(stops[i][1] + f * (stops[i + 1][1] - stops[i][1])),
                  static_cast<int>(stops[i][2] + f * (stops[i + 1][2] - stops[i][2])));
    return buf;
}

void emit_json(const std::vector<GridRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("emit_report: cannot open '" + path + "'");
    out << "[\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const GridRow& r = rows[i];
        out << "  {\"mode\":\"" << r.mode << "\",\"N\":" << r.n << ",\"M\":" << r.m
            << ",\"K\":" << r.k << ",\"cached\":" << (r.cached ? "true" : "false")
            << ",\"phase\":\"" << r.phase << "\",\"wall_ms_mean\":" << r.wall_ms_mean
            << ",\"wall_ms_std\":" << r.wall_ms_std << ",\"peak_bytes\":" << r.peak_bytes
            << ",\"oom\":" << (r.oom ? "true" : "false") << ",\"auc\":" << r.auc << "}"
            << (i + 1 < rows.size() ? "," : "") << "\n";
    }
    out << "]\n";
}

void emit_heatmap(const std::vector<GridRow>& rows, const std::string& path) {
    // One panel per (mode, cached) pair, cells over the N x M axes, colored by
    // log10 of the subsequent-predict mean.
    std::set<std::pair<std::string, bool>> panels;
    std::set<std::int64_t> ns, ms;
    std::map<std::tuple<std::string, bool, std::int64_t, std::int64_t>, const GridRow*> cells;
    double lo = 1e300, hi = -1e300;
    for (const GridRow& r : rows) {
        if (r.phase != "subsequent_predict") continue;
        panels.insert({r.mode, r.cached});
        ns.insert(r.n);
        ms.insert(r.m);
        cells[{r.mode, r.cached, r.n, r.m}] = &r;
        if (!r.oom && r.wall_ms_mean > 0) {
            lo = std::min(lo, std::log10(r.wall_ms_mean));
            hi = std::max(hi, std::log10(r.wall_ms_mean));
        }
    }
    if (panels.empty()) throw DataError("emit_report: no subsequent_predict rows to draw");
    if (hi <= lo) hi = lo + 1.0;

    const int cell_px = 56, pad = 70, panel_gap = 36, title_h = 28;
    const int grid_w = static_cast<int>(ns.size()) * cell_px;
    const int grid_h = static_cast<int>(ms.size()) * cell_px;
    const int panel_w = grid_w + pad;
    const int width = pad + static_cast<int>(panels.size()) * (panel_w + panel_gap);
    const int height = title_h + grid_h + pad;

    std::ofstream out(path);
    if (!out) throw IoError("emit_report: cannot open '" + path + "'");
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" font-family=\"monospace\" font-size=\"11\">\n";
    out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";

    int panel_idx = 0;
    for (const auto& [mode, cached] : panels) {
        const int x0 = pad + panel_idx * (panel_w + panel_gap);
        const int y0 = title_h;
        out << "<text x=\"" << x0 << "\" y=\"16\">" << mode << (cached ? " +kv" : "")
            << " subsequent predict (log ms)</text>\n";
        int xi = 0;
        for (std::int64_t n : ns) {
            int yi = 0;
            for (std::int64_t m : ms) {
                const int x = x0 + xi * cell_px;
                const int y = y0 + yi * cell_px;
                const auto it = cells.find({mode, cached, n, m});
                if (it == cells.end()) {
                    ++yi;
                    continue;
                }
                const GridRow& r = *it->second;
                if (r.oom) {
                    out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell_px
                        << "\" height=\"" << cell_px << "\" fill=\"black\"/>\n";
                    out << "<text x=\"" << x + 10 << "\" y=\"" << y + cell_px / 2 + 4
                        << "\" fill=\"white\">OOM</text>\n";
                } else {
                    const double t = (std::log10(std::max(r.wall_ms_mean, 1e-3)) - lo) / (hi - lo);
                    out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell_px
                        << "\" height=\"" << cell_px << "\" fill=\"" << ramp_color(t)
                        << "\" stroke=\"#888\"/>\n";
                    out << "<text x=\"" << x + 4 << "\" y=\"" << y + cell_px / 2 + 4 << "\">"
                        << fmt(r.wall_ms_mean, r.wall_ms_mean < 10 ? 1 : 0) << "</text>\n";
                }
                ++yi;
            }
            out << "<text x=\"" << x0 + xi * cell_px + 8 << "\" y=\"" << y0 + grid_h + 16
                << "\">N=" << n << "</text>\n";
            ++xi;
        }
        int yi = 0;
        for (std::int64_t m : ms) {
            out << "<text x=\"" << x0 - 54 << "\" y=\"" << y0 + yi * cell_px + cell_px / 2 + 4
                << "\">M=" << m << "</text>\n";
            ++yi;
        }
        ++panel_idx;
    }
    out << "</svg>\n";
}

}  // namespace

void emit_report(const std::vector<GridRow>& rows, ReportFormat format, const std::string& path) {
    if (rows.empty()) throw DataError("emit_report: no rows");
    switch (format) {
        case ReportFormat::csv:
            write_grid_csv(rows, path);
            return;
        case ReportFormat::json:
            emit_json(rows, path);
            return;
        case ReportFormat::svg_heatmap:
            emit_heatmap(rows, path);
            return;
        case ReportFormat::svg_lines:
            throw ConfigError("emit_report: svg-lines takes streaming series, use emit_streaming_report");
    }
}

void emit_streaming_report(const std::vector<StreamingResult>& series, const std::string& path) {
    if (series.empty()) throw DataError("emit_streaming_report: no series");
    std::size_t batches = 0;
    double max_total = 0.0;
    std::vector<std::vector<double>> cumulative(series.size());
    for (std::size_t s = 0; s < series.size(); ++s) {
        double acc = series[s].first_predict_ms;
        cumulative[s].push_back(acc);
        for (double ms : series[s].per_batch_ms) {
            acc += ms;
            cumulative[s].push_back(acc);
        }
        batches = std::max(batches, cumulative[s].size());
        max_total = std::max(max_total, acc);
    }

    const int width = 680, height = 420, pad = 56;
    const double plot_w = width - 2 * pad, plot_h = height - 2 * pad;
    static const char* palette[6] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    std::ofstream out(path);
    if (!out) throw IoError("emit_streaming_report: cannot open '" + path + "'");
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"monospace\" font-size=\"11\">\n";
    out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    out << "<text x=\"" << pad << "\" y=\"20\">cumulative predict time (ms) vs batch</text>\n";
    out << "<line x1=\"" << pad << "\" y1=\"" << height - pad << "\" x2=\"" << width - pad
        << "\" y2=\"" << height - pad << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\""
        << height - pad << "\" stroke=\"black\"/>\n";

    for (std::size_t s = 0; s < series.size(); ++s) {
        out << "<polyline fill=\"none\" stroke=\"" << palette[s % 6] << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t b = 0; b < cumulative[s].size(); ++b) {
            const double x = pad + plot_w * static_cast<double>(b) /
                                       std::max<std::size_t>(1, batches - 1);
            const double y = height - pad - plot_h * (cumulative[s][b] / max_total);
            out << fmt(x, 1) << ',' << fmt(y, 1) << ' ';
        }
        out << "\"/>\n";
        std::ostringstream label;
        label << series[s].mode;
        if (series[s].mode == "taco" || series[s].mode == "random" || series[s].mode == "knn")
            label << " r=" << fmt(series[s].rate * 100, 0) << "%";
        if (series[s].cached) label << " +kv";
        out << "<text x=\"" << width - pad - 170 << "\" y=\"" << pad + 16 * (s + 1) << "\" fill=\""
            << palette[s % 6] << "\">" << label.str() << " ("
            << fmt(series[s].mean_batch_ms(), 1) << " ms/batch)</text>\n";
    }
    out << "<text x=\"" << pad << "\" y=\"" << height - pad + 28 << "\">batches: 0.."
        << batches - 1 << ", top=" << fmt(max_total, 0) << " ms</text>\n";
    out << "</svg>\n";
}

}  // namespace taco
