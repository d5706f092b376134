#include "taco/compressor.hpp"

#include <cmath>

namespace taco {

std::int64_t k_for_rate(double rate, std::int64_t n_train, int min_k) {
    if (rate <= 0.0 || rate > 1.0)
        throw ConfigError("compression rate must lie in (0,1], got " + std::to_string(rate));
    const auto k = static_cast<std::int64_t>(std::floor(rate * static_cast<double>(n_train) + 0.5));
    return std::min(n_train, std::max<std::int64_t>(min_k, k));
}

DummyTable init_dummy(const Table& train, std::int64_t k, Rng& rng) {
    if (k < 1 || k > train.n_rows)
        throw DataError("init_dummy: K=" + std::to_string(k) + " outside [1, N=" +
                        std::to_string(train.n_rows) + "]");
    // Partial Fisher-Yates over row indices: K distinct draws.
    std::vector<std::int64_t> pool(static_cast<std::size_t>(train.n_rows));
    for (std::int64_t i = 0; i < train.n_rows; ++i) pool[static_cast<std::size_t>(i)] = i;
    std::vector<std::int64_t> picks;
    picks.reserve(static_cast<std::size_t>(k));
    for (std::int64_t i = 0; i < k; ++i) {
        const std::int64_t j = rng.uniform_int(i, train.n_rows - 1);
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
        picks.push_back(pool[static_cast<std::size_t>(i)]);
    }

    DummyTable dummy;
    dummy.source_indices = picks;
    dummy.rows.schema = train.schema;
    dummy.rows.n_rows = k;
    dummy.rows.num_classes = train.num_classes;
    dummy.rows.preprocessed = train.preprocessed;
    dummy.rows.cells.reserve(static_cast<std::size_t>(k * train.n_features()));
    for (std::int64_t r : picks)
        for (std::int64_t c = 0; c < train.n_features(); ++c)
            dummy.rows.cells.push_back(train.cell(r, c));
    dummy.rows.labels.assign(static_cast<std::size_t>(k), kMaskPlaceholder);
    return dummy;
}

Tensor compress_latents(const Table& train, const DummyTable& dummy, const ModelParams& params,
                        const ModelConfig& cfg) {
    if (!train.has_labels()) throw DataError("compress: training table lacks labels");
    const LatentCube train_cube = embed_cells(train, params, "compressor.", cfg);
    const LatentCube dummy_cube = embed_cells(dummy.rows, params, "compressor.", cfg);
    const LatentCube joint{concat({train_cube.values, dummy_cube.values}, 0)};

    // Real and dummy rows attend to each other freely; the masked target cell
    // is what distinguishes them.
    const AttentionMask mask = AttentionMask::full(joint.rows());
    const LatentCube out = run_stack(joint, mask, params, "compressor.", cfg.blocks, cfg);
    return slice(out.values, 0, train.n_rows, dummy.rows.n_rows);
}

CompressedContext compress(const Table& train, std::int64_t k, const ModelParams& params,
                           const ModelConfig& cfg, std::uint64_t seed) {
    autograd::NoGradGuard no_grad;
    Rng rng(seed);
    const DummyTable dummy = init_dummy(train, k, rng);
    CompressedContext ctx;
    ctx.latents = compress_latents(train, dummy, params, cfg);
    ctx.k = k;
    ctx.n_train = train.n_rows;
    ctx.rate = static_cast<double>(k) / static_cast<double>(train.n_rows);
    ctx.source_fingerprint = train.fingerprint();
    ctx.compressor_version = params.fingerprint_prefix("compressor.");
    return ctx;
}

void init_bridge_params(ModelParams& params, const ModelConfig& cfg, Rng& rng) {
    const std::int64_t l = cfg.embed_dim;
    const std::int64_t f = static_cast<std::int64_t>(cfg.ffn_mult) * l;
    params.add("bridge.w1",
               Tensor::randn({l, f}, rng, std::sqrt(2.0 / static_cast<double>(l + f))));
    params.add("bridge.w2", Tensor::zeros({f, l}));
}

Tensor bridge_latents(const Tensor& latents, const ModelParams& params, const ModelConfig& cfg) {
    const Shape shape = latents.shape();
    const std::int64_t l = cfg.embed_dim;
    const Tensor flat = reshape(latents, {latents.numel() / l, l});
    const Tensor out =
        matmul(gelu(matmul(flat, params.at("bridge.w1"))), params.at("bridge.w2"));
    return add(latents, reshape(out, shape));
}

CompressedContext bridge(const CompressedContext& compressed, const ModelParams& params,
                         const ModelConfig& cfg) {
    autograd::NoGradGuard no_grad;
    CompressedContext out = compressed;
    out.latents = bridge_latents(compressed.latents, params, cfg);
    return out;
}

}  // namespace taco
