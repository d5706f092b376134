#pragma once

#include <string>
#include <vector>

#include "taco/infer.hpp"
#include "taco/prior.hpp"

namespace taco {

// Grid axes for the (N, M) cost/accuracy sweep. Each cell draws one
// synthetic episode with N training rows and `test_rows` test rows, fits
// every (mode, rate, cached) combination, and streams the test set in
// `batch_count` batches.
struct BenchGrid {
    std::vector<std::int64_t> n_values{1024, 4096};
    std::vector<std::int64_t> m_values{16, 64};
    std::vector<InferMode> modes{InferMode::taco, InferMode::pot};
    std::vector<double> rates{0.04};
    std::vector<bool> cached_variants{false};
    int repetitions = 1;
    int batch_count = 10;
    std::int64_t test_rows = 500;
    Precision precision = Precision::f32;
    std::uint64_t seed = 0;
    std::size_t mem_cap_bytes = 0;  // 0 = uncapped; nonzero makes OOM cells observable

    void validate() const;
};

struct GridRow {
    std::string mode;
    std::int64_t n = 0, m = 0, k = 0;
    bool cached = false;
    std::string phase;  // fit | first_predict | subsequent_predict
    double wall_ms_mean = 0.0;
    double wall_ms_std = 0.0;
    std::size_t peak_bytes = 0;
    bool oom = false;
    double auc = 0.0;  // only meaningful on subsequent_predict rows
};

// Appends one CSV line per completed row (crash-safe: the file is valid after
// any prefix of cells). Out-of-memory cells are recorded, not fatal.
std::vector<GridRow> run_grid(const BenchGrid& grid, const ModelParams& params,
                              const ModelConfig& cfg, const std::string& results_csv);

extern const char* kGridCsvHeader;
void write_grid_csv(const std::vector<GridRow>& rows, const std::string& path);
std::vector<GridRow> read_grid_csv(const std::string& path);

// One streaming-batch experiment: fit once, one warmup (first) predict, then
// `batches` timed subsequent predicts over round-robin test slices.
struct StreamingResult {
    std::string mode;
    bool cached = false;
    double rate = 0.0;
    std::int64_t n = 0, m = 0, k = 0;
    double fit_ms = 0.0;
    double first_predict_ms = 0.0;
    std::vector<double> per_batch_ms;
    std::size_t predict_peak_bytes = 0;
    double auc = 0.0;

    double mean_batch_ms() const;
    double std_batch_ms() const;
};

StreamingResult run_streaming(const Table& train, const Table& test, InferMode mode, double rate,
                              bool cached, int batches, std::int64_t batch_rows,
                              const ModelParams& params, const ModelConfig& cfg,
                              Precision precision, std::uint64_t seed);

enum class ReportFormat { csv, json, svg_heatmap, svg_lines };
ReportFormat report_format_from_string(const std::string& name);

// Deterministic bytes given the same rows. Heatmaps color subsequent-predict
// time on a log scale, one panel per (mode, cached); OOM cells render black
// with a marker. Line charts plot cumulative predict time per series.
void emit_report(const std::vector<GridRow>& rows, ReportFormat format, const std::string& path);
void emit_streaming_report(const std::vector<StreamingResult>& series, const std::string& path);

// Synthetic grid-cell episode with n train and t test rows of m features.
Episode grid_episode(std::int64_t n, std::int64_t m, std::int64_t t, std::uint64_t seed);

}  // namespace taco
