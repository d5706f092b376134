#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "taco/compressor.hpp"
#include "taco/engine.hpp"
#include "taco/preprocess.hpp"
#include "taco/rng.hpp"

namespace taco {

enum class InferMode { taco, pot, random, knn };
enum class Precision { f32, f64 };

std::string to_string(InferMode mode);
InferMode infer_mode_from_string(const std::string& name);

// One line of the newline-delimited timing log.
struct TimingRecord {
    std::string phase;  // fit | first_predict | subsequent_predict
    double wall_ms = 0.0;
    std::size_t peak_bytes = 0;
    std::string mode;
    std::int64_t n = 0, m = 0, k = 0;
    bool cached = false;
};

std::string timing_to_json(const TimingRecord& record);
void append_timing(const std::string& path, const TimingRecord& record);

struct FitOptions {
    InferMode mode = InferMode::taco;
    double rate = 0.04;
    bool chunking = false;
    bool kv_cache = false;
    Precision precision = Precision::f32;
    int min_k = 1;
    std::uint64_t seed = 0;
};

struct PredictResult {
    std::vector<double> probabilities;  // row-major [rows x n_classes]
    int n_classes = 0;
    TimingRecord timing;
};

// Immutable after fit; concurrent predict calls over distinct result buffers
// are safe for taco/pot (read-only context).
class FittedState {
  public:
    FittedState();
    ~FittedState();
    FittedState(FittedState&&) noexcept;
    FittedState& operator=(FittedState&&) noexcept;

    PredictResult predict(const Table& test_features);

    InferMode mode() const;
    std::int64_t n_train() const;
    std::int64_t context_rows() const;  // K for taco/random/knn, N for pot
    std::int64_t kv_token_count() const;  // 0 when no cache
    int n_classes() const;
    const TimingRecord& fit_record() const;
    const engine::FlopCounters& flops() const;  // cumulative across fit+predicts
    void reset_flops();

    struct Impl;
    std::unique_ptr<Impl> impl;
};

// Fits a context from a (raw or preprocessed) labeled training table.
// Records wall time and instrumented peak allocation; allocation failures
// against the AllocTracker cap surface as CapacityError.
FittedState fit(const Table& train, const FitOptions& options, const ModelParams& params,
                const ModelConfig& cfg);

// Piecewise chunk-size policy over the training row count.
std::int64_t chunk_policy(std::int64_t n);

struct ChunkPlan {
    std::int64_t chunk_size = 0;
    std::vector<std::pair<std::int64_t, std::int64_t>> chunks;  // (start, length)
    std::vector<std::int64_t> k_per_chunk;
    std::int64_t total_k = 0;
};

// K_c = max(min_k, round_half_up(rate * chunk_len)); chunks are disjoint and
// cover [0, n).
ChunkPlan plan_chunks(std::int64_t n, double rate, int min_k,
                      std::optional<std::int64_t> chunk_size = std::nullopt);

// Sequential per-chunk compression stitched along the row axis. Peak latent
// memory is bounded by one chunk, not by N.
CompressedContext chunk_and_stitch(const Table& train, double rate, const ModelParams& params,
                                   const ModelConfig& cfg, int min_k, std::uint64_t seed);

// Uniform subsample of K rows, labels retained.
Table baseline_random(const Table& train, std::int64_t k, Rng& rng);

// Grows per-test-point k-NN sets until the union reaches K, then trims to
// exactly K by round-robin removal from over-represented test points.
// Distances are euclidean over the preprocessed feature cells.
Table baseline_knn(const Table& train, const Table& test_batch, std::int64_t k);
std::vector<std::int64_t> baseline_knn_indices(const Table& train, const Table& test_batch,
                                               std::int64_t k);

// Closed-form multiply-accumulate counts for one uncached forward over the
// retained context (K rows for taco, N for pot), mirroring the engine's
// instrumented counters exactly, plus KV-cache size.
struct CostEstimate {
    std::uint64_t row_attn_ctx_ctx = 0;
    std::uint64_t col_attn = 0;
    std::uint64_t proj = 0;
    std::uint64_t ffn = 0;
    std::uint64_t encoder = 0;  // assumes all-numeric feature cells
    std::uint64_t cache_tokens = 0;
    std::uint64_t cache_bytes = 0;

    std::uint64_t total_flops() const { return row_attn_ctx_ctx + col_attn + proj + ffn + encoder; }
};

CostEstimate cost_model(std::int64_t n, std::int64_t m, std::int64_t k, int embed_dim, int blocks,
                        int heads, bool cached, InferMode mode, int ffn_mult = 4,
                        int bytes_per_scalar = 8);

// CompressedContext round-trip through the shared checkpoint container.
void save_context(const std::string& path, const CompressedContext& ctx, const ModelConfig& cfg);
CompressedContext load_context(const std::string& path);

}  // namespace taco
