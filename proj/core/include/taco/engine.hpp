#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "taco/alloc_tracker.hpp"
#include "taco/model_config.hpp"
#include "taco/params.hpp"
#include "taco/table.hpp"

// Graph-free forward engine used at inference time. Reproduces the training
// path bit-for-bit in double (and to float precision in f32), with streamed
// attention so peak memory stays bounded by one query block, plus KV caching
// and multiply-accumulate counters.
namespace taco::engine {

// One multiply-add counts as 2 FLOPs, matching the analytic cost model.
struct FlopCounters {
    std::uint64_t row_attn_ctx_ctx = 0;  // scores + weighted sum among context rows
    std::uint64_t row_attn_query = 0;    // query rows attending to context + self
    std::uint64_t col_attn = 0;
    std::uint64_t proj = 0;              // q/k/v/o projections
    std::uint64_t ffn = 0;
    std::uint64_t encoder = 0;           // numeric-cell affine embeddings

    std::uint64_t total() const {
        return row_attn_ctx_ctx + row_attn_query + col_attn + proj + ffn + encoder;
    }
};

template <typename T>
struct Cube {
    TrackedBuffer<T> data;  // [rows, cols, latent] row-major
    std::int64_t rows = 0, cols = 0, latent = 0;

    void resize(std::int64_t r, std::int64_t c, std::int64_t l) {
        rows = r;
        cols = c;
        latent = l;
        data.resize(static_cast<std::size_t>(r * c * l));
    }
    T* cell(std::int64_t r, std::int64_t c) { return data.data() + (r * cols + c) * latent; }
    const T* cell(std::int64_t r, std::int64_t c) const {
        return data.data() + (r * cols + c) * latent;
    }
};

template <typename T>
struct BlockWeights {
    std::vector<T> row_norm_g, row_norm_b, row_wq, row_wk, row_wv, row_wo;
    std::vector<T> col_norm_g, col_norm_b, col_wq, col_wk, col_wv, col_wo;
    std::vector<T> ffn_norm_g, ffn_norm_b, ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

template <typename T>
struct ModuleWeights {
    std::vector<T> num_w, num_b;  // [latent] each
    std::vector<T> cat_emb;       // [(max_categories+1) x latent]
    std::vector<T> tgt_emb;       // [(num_classes_max+2) x latent]
    std::vector<BlockWeights<T>> blocks;
};

template <typename T>
struct EngineModel {
    ModelConfig cfg;
    bool has_compressor = false;
    ModuleWeights<T> compressor;
    ModuleWeights<T> predictor;
    std::vector<T> bridge_w1, bridge_w2;
    std::vector<T> head_norm_g, head_norm_b, head_w, head_b;

    static EngineModel<T> from_params(const ModelParams& params, const ModelConfig& cfg,
                                      bool with_compressor);
};

// Per-block key/value tensors over all context tokens (rows x (M+1) cells).
// Layout per block: [cols][ctx_rows][latent], heads packed along latent.
template <typename T>
struct KVCache {
    std::int64_t ctx_rows = 0, cols = 0, latent = 0;
    std::vector<TrackedBuffer<T>> keys;    // one per block
    std::vector<TrackedBuffer<T>> values;  // one per block

    std::int64_t token_count() const { return ctx_rows * cols; }
    std::size_t bytes() const {
        return 2 * keys.size() * static_cast<std::size_t>(ctx_rows * cols * latent) * sizeof(T);
    }
};

// Embeds a preprocessed table with a module's encoder. `label_override`
// (MISSING_TARGET / MASK_PLACEHOLDER) replaces the table's labels when set.
template <typename T>
Cube<T> embed_table(const Table& table, const ModuleWeights<T>& w, const ModelConfig& cfg,
                    std::optional<int> label_override, FlopCounters* flops);

// Runs all blocks over the cube. Rows [0, ctx_rows) attend bidirectionally
// among themselves; rows [ctx_rows, rows) attend to the context block and
// themselves only. ctx_rows == rows gives the compressor's full attention.
template <typename T>
void run_blocks(Cube<T>& cube, const ModuleWeights<T>& w, const ModelConfig& cfg,
                std::int64_t ctx_rows, FlopCounters* flops);

// Context-only forward that additionally materializes per-block K/V tensors
// for later query-only prediction.
template <typename T>
KVCache<T> build_kv_cache(Cube<T> context /*by value: consumed*/, const ModuleWeights<T>& w,
                          const ModelConfig& cfg, FlopCounters* flops);

// Query-only forward against a prebuilt cache: each test row attends to the
// cached context tokens plus itself. Mathematically identical to run_blocks
// over [context; test].
template <typename T>
void run_blocks_cached(Cube<T>& test, const KVCache<T>& cache, const ModuleWeights<T>& w,
                       const ModelConfig& cfg, FlopCounters* flops);

// Residual two-layer MLP applied per cell latent.
template <typename T>
void apply_bridge(Cube<T>& cube, const EngineModel<T>& model, FlopCounters* flops);

// Head readout from the test rows' target-column latents; returns row-major
// [rows x n_classes] probabilities (softmax applied).
template <typename T>
std::vector<double> readout_probs(const Cube<T>& test_rows_out, const EngineModel<T>& model,
                                  int n_classes, FlopCounters* flops);

extern template struct EngineModel<float>;
extern template struct EngineModel<double>;

}  // namespace taco::engine
