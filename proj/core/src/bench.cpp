#include "taco/bench.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "taco/metrics.hpp"

namespace taco {

const char* kGridCsvHeader = "mode,N,M,K,cached,phase,wall_ms_mean,wall_ms_std,peak_bytes,oom,auc";

void BenchGrid::validate() const {
    if (n_values.empty() || m_values.empty() || modes.empty())
        throw ConfigError("bench: grid axes must be nonempty");
    if (rates.empty()) throw ConfigError("bench: need at least one rate");
    if (repetitions < 1 || batch_count < 1 || test_rows < 2)
        throw ConfigError("bench: repetitions/batch_count/test_rows too small");
}

namespace {

std::string row_to_csv(const GridRow& r) {
    std::ostringstream os;
    os << r.mode << ',' << r.n << ',' << r.m << ',' << r.k << ',' << (r.cached ? 1 : 0) << ','
       << r.phase << ',' << r.wall_ms_mean << ',' << r.wall_ms_std << ',' << r.peak_bytes << ','
       << (r.oom ? 1 : 0) << ',' << r.auc;
    return os.str();
}

double mean_of(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

double std_of(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    const double mu = mean_of(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - mu) * (x - mu);
    return std::sqrt(ss / static_cast<double>(xs.size()));
}

double auc_of(const std::vector<double>& probs, int n_classes, const std::vector<int>& labels) {
    if (n_classes == 2) {
        std::vector<double> scores(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) scores[i] = probs[i * 2 + 1];
        return roc_auc_binary(scores, labels);
    }
    return roc_auc_ovo(probs, n_classes, labels);
}

}  // namespace

double StreamingResult::mean_batch_ms() const { return mean_of(per_batch_ms); }
double StreamingResult::std_batch_ms() const { return std_of(per_batch_ms); }

Episode grid_episode(std::int64_t n, std::int64_t m, std::int64_t t, std::uint64_t seed) {
    PriorConfig prior = desk_prior();
    prior.n_rows = {n + t, n + t};
    prior.n_features = {m, m};
    prior.num_classes = {2, 2};
    prior.train_fraction = static_cast<double>(n) / static_cast<double>(n + t);
    prior.categorical_feature_prob = 0.1;
    prior.seed = seed;
    return sample_episode_keyed(prior, seed);
}

StreamingResult run_streaming(const Table& train, const Table& test, InferMode mode, double rate,
                              bool cached, int batches, std::int64_t batch_rows,
                              const ModelParams& params, const ModelConfig& cfg,
                              Precision precision, std::uint64_t seed) {
    FitOptions options;
    options.mode = mode;
    options.rate = rate;
    options.kv_cache = cached && (mode == InferMode::taco || mode == InferMode::pot);
    options.precision = precision;
    options.seed = seed;

    StreamingResult result;
    result.mode = to_string(mode);
    result.cached = options.kv_cache;
    result.rate = rate;
    result.n = train.n_rows;
    result.m = train.n_features();

    FittedState state = fit(train, options, params, cfg);
    result.k = state.context_rows();
    result.fit_ms = state.fit_record().wall_ms;

    // Round-robin slices keep every batch the same size.
    std::vector<Table> slices;
    slices.reserve(static_cast<std::size_t>(batches));
    for (int b = 0; b < batches; ++b) {
        std::vector<std::int64_t> rows;
        rows.reserve(static_cast<std::size_t>(batch_rows));
        for (std::int64_t i = 0; i < batch_rows; ++i)
            rows.push_back((static_cast<std::int64_t>(b) * batch_rows + i) % test.n_rows);
        slices.push_back(test.select_rows(rows));
    }

    // Warmup call carries the one-time cost and is excluded from the mean.
    const PredictResult first = state.predict(slices[0]);
    result.first_predict_ms = first.timing.wall_ms;

    std::vector<double> all_probs;
    std::vector<int> all_labels;
    std::size_t peak = 0;
    for (int b = 0; b < batches; ++b) {
        const PredictResult r = state.predict(slices[static_cast<std::size_t>(b)]);
        result.per_batch_ms.push_back(r.timing.wall_ms);
        peak = std::max(peak, r.timing.peak_bytes);
        all_probs.insert(all_probs.end(), r.probabilities.begin(), r.probabilities.end());
        for (int y : slices[static_cast<std::size_t>(b)].labels) all_labels.push_back(y);
    }
    result.predict_peak_bytes = peak;
    bool two_classes_present = false;
    for (int y : all_labels) two_classes_present = two_classes_present || y != all_labels[0];
    if (two_classes_present)
        result.auc = auc_of(all_probs, state.n_classes(), all_labels);
    return result;
}

std::vector<GridRow> run_grid(const BenchGrid& grid, const ModelParams& params,
                              const ModelConfig& cfg, const std::string& results_csv) {
    grid.validate();
    std::ofstream csv(results_csv, std::ios::app);
    if (!csv) throw IoError("run_grid: cannot open '" + results_csv + "'");
    if (csv.tellp() == 0) csv << kGridCsvHeader << '\n';

    std::vector<GridRow> rows;
    const auto emit = [&](const GridRow& row) {
        rows.push_back(row);
        csv << row_to_csv(row) << '\n';
        csv.flush();  // a killed run leaves exactly the completed rows
    };

    for (std::int64_t n : grid.n_values) {
        for (std::int64_t m : grid.m_values) {
            const Episode episode =
                grid_episode(n, m, grid.test_rows, Rng::derive({grid.seed, static_cast<std::uint64_t>(n),
                                                                static_cast<std::uint64_t>(m)}));
            for (InferMode mode : grid.modes) {
                const std::vector<double> rates =
                    mode == InferMode::pot ? std::vector<double>{1.0} : grid.rates;
                for (double rate : rates) {
                    for (bool cached : grid.cached_variants) {
                        if (cached && (mode == InferMode::random || mode == InferMode::knn))
                            continue;
                        GridRow base;
                        base.mode = to_string(mode);
                        base.n = n;
                        base.m = m;
                        base.cached = cached;
                        if (grid.mem_cap_bytes)
                            AllocTracker::instance().set_capacity_limit(grid.mem_cap_bytes);
                        try {
                            std::vector<double> fit_ms, first_ms;
                            std::vector<double> sub_ms;
                            double auc = 0.0;
                            std::size_t peak = 0;
                            std::int64_t k = 0;
                            for (int rep = 0; rep < grid.repetitions; ++rep) {
                                StreamingResult sr = run_streaming(
                                    episode.train, episode.test, mode, rate, cached,
                                    grid.batch_count, grid.test_rows / grid.batch_count, params,
                                    cfg, grid.precision,
                                    Rng::derive({grid.seed, static_cast<std::uint64_t>(rep)}));
                                fit_ms.push_back(sr.fit_ms);
                                first_ms.push_back(sr.first_predict_ms);
                                sub_ms.insert(sub_ms.end(), sr.per_batch_ms.begin(),
                                              sr.per_batch_ms.end());
                                auc = sr.auc;
                                peak = std::max(peak, sr.predict_peak_bytes);
                                k = sr.k;
                            }
                            base.k = k;
                            GridRow fit_row = base;
                            fit_row.phase = "fit";
                            fit_row.wall_ms_mean = mean_of(fit_ms);
                            fit_row.wall_ms_std = std_of(fit_ms);
                            emit(fit_row);
                            GridRow first_row = base;
                            first_row.phase = "first_predict";
                            first_row.wall_ms_mean = mean_of(first_ms);
                            first_row.wall_ms_std = std_of(first_ms);
                            emit(first_row);
                            GridRow sub_row = base;
                            sub_row.phase = "subsequent_predict";
                            sub_row.wall_ms_mean = mean_of(sub_ms);
                            sub_row.wall_ms_std = std_of(sub_ms);
                            sub_row.peak_bytes = peak;
                            sub_row.auc = auc;
                            emit(sub_row);
                        } catch (const CapacityError&) {
                            GridRow oom_row = base;
                            oom_row.phase = "subsequent_predict";
                            oom_row.oom = true;
                            emit(oom_row);
                        }
                        if (grid.mem_cap_bytes) AllocTracker::instance().set_capacity_limit(0);
                    }
                }
            }
        }
    }
    return rows;
}

void write_grid_csv(const std::vector<GridRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("write_grid_csv: cannot open '" + path + "'");
    out << kGridCsvHeader << '\n';
    for (const GridRow& r : rows) out << row_to_csv(r) << '\n';
}

std::vector<GridRow> read_grid_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_grid_csv: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line != kGridCsvHeader)
        throw DataError("read_grid_csv: unexpected header in '" + path + "'");
    std::vector<GridRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) f.push_back(tok);
        if (f.size() != 11) throw DataError("read_grid_csv: malformed row '" + line + "'");
        GridRow r;
        r.mode = f[0];
        r.n = std::stoll(f[1]);
        r.m = std::stoll(f[2]);
        r.k = std::stoll(f[3]);
        r.cached = f[4] == "1";
        r.phase = f[5];
        r.wall_ms_mean = std::stod(f[6]);
        r.wall_ms_std = std::stod(f[7]);
        r.peak_bytes = static_cast<std::size_t>(std::stoull(f[8]));
        r.oom = f[9] == "1";
        r.auc = std::stod(f[10]);
        rows.push_back(r);
    }
    return rows;
}

ReportFormat report_format_from_string(const std::string& name) {
    if (name == "csv") return ReportFormat::csv;
    if (name == "json") return ReportFormat::json;
    if (name == "svg-heatmap") return ReportFormat::svg_heatmap;
    if (name == "svg-lines") return ReportFormat::svg_lines;
    throw ConfigError("unknown report format '" + name + "'");
}

}  // namespace taco
