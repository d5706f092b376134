#pragma once

#include <cstdint>
#include <string>

#include "taco/tab2d.hpp"

namespace taco {

// K placeholder rows whose final latent states become the compressed context.
// Feature cells are copied from randomly chosen training rows; every target
// cell carries MASK_PLACEHOLDER.
struct DummyTable {
    Table rows;
    std::vector<std::int64_t> source_indices;
};

// The K x (M+1) x L latent summary emitted by the compressor, with its
// compression rate and provenance.
struct CompressedContext {
    Tensor latents;  // [K, M+1, L]
    std::int64_t k = 0;
    std::int64_t n_train = 0;
    double rate = 0.0;  // k / n_train, recorded exactly
    std::uint64_t source_fingerprint = 0;
    std::uint64_t compressor_version = 0;  // fingerprint of the compressor parameters
};

// round(rate * n_train) half-up, floored at min_k and capped at n_train.
std::int64_t k_for_rate(double rate, std::int64_t n_train, int min_k = 1);

// Samples K distinct source rows (without replacement), copies their feature
// cells and masks every target cell. Never reads the label column.
DummyTable init_dummy(const Table& train, std::int64_t k, Rng& rng);

// Graph-path forward: embeds [train; dummy], runs the compressor stack with
// full bidirectional row attention over all N+K rows, and returns the last K
// latent rows. Differentiable wrt the "compressor." parameters.
Tensor compress_latents(const Table& train, const DummyTable& dummy, const ModelParams& params,
                        const ModelConfig& cfg);

// Inference-facing wrapper: deterministic in (train, k, params, seed).
CompressedContext compress(const Table& train, std::int64_t k, const ModelParams& params,
                           const ModelConfig& cfg, std::uint64_t seed);

// Two-layer residual MLP between compressor and predictor, applied per cell
// latent: y = x + w2 * gelu(w1 * x). Shape-preserving.
Tensor bridge_latents(const Tensor& latents, const ModelParams& params, const ModelConfig& cfg);
CompressedContext bridge(const CompressedContext& compressed, const ModelParams& params,
                         const ModelConfig& cfg);

// Registers "bridge.w1" / "bridge.w2". w2 starts at zero so the bridge is the
// identity at initialization.
void init_bridge_params(ModelParams& params, const ModelConfig& cfg, Rng& rng);

}  // namespace taco
