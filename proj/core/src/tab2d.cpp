#include "taco/tab2d.hpp"

#include <cmath>

namespace taco {

namespace {

constexpr double kMaskValue = -1e30;

Tensor xavier(Shape shape, Rng& rng) {
    const double fan_in = static_cast<double>(shape[0]);
    const double fan_out = static_cast<double>(shape[shape.size() - 1]);
    return Tensor::randn(std::move(shape), rng, std::sqrt(2.0 / (fan_in + fan_out)));
}

}  // namespace

AttentionMask::AttentionMask(std::int64_t rows, std::vector<std::uint8_t> allow)
    : rows_(rows), allow_(std::move(allow)) {
    if (static_cast<std::int64_t>(allow_.size()) != rows_ * rows_)
        throw ShapeError("AttentionMask: expected " + std::to_string(rows_ * rows_) + " entries");
    // A token must attend to something; only then is the diagonal forced on.
    for (std::int64_t i = 0; i < rows_; ++i) {
        bool any = false;
        for (std::int64_t j = 0; j < rows_; ++j) any = any || allowed(i, j);
        if (!any) throw ShapeError("AttentionMask: row " + std::to_string(i) + " attends to nothing");
    }
    for (std::int64_t i = 0; i < rows_; ++i) allow_[static_cast<std::size_t>(i * rows_ + i)] = 1;
}

AttentionMask AttentionMask::full(std::int64_t rows) {
    return AttentionMask(rows, std::vector<std::uint8_t>(static_cast<std::size_t>(rows * rows), 1));
}

AttentionMask AttentionMask::predictor(std::int64_t context_rows, std::int64_t test_rows) {
    const std::int64_t n = context_rows + test_rows;
    std::vector<std::uint8_t> allow(static_cast<std::size_t>(n * n), 0);
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < context_rows; ++j)
            allow[static_cast<std::size_t>(i * n + j)] = 1;  // everyone sees the context
        allow[static_cast<std::size_t>(i * n + i)] = 1;      // and itself
    }
    return AttentionMask(n, std::move(allow));
}

Tensor AttentionMask::additive() const {
    std::vector<double> data(allow_.size());
    for (std::size_t i = 0; i < allow_.size(); ++i) data[i] = allow_[i] ? 0.0 : kMaskValue;
    return Tensor::from_data({rows_, rows_}, std::move(data));
}

std::int64_t target_embedding_rows(const ModelConfig& cfg) { return cfg.num_classes_max + 2; }

std::int64_t target_embedding_id(int label, const ModelConfig& cfg) {
    if (label == kMissingTarget) return cfg.num_classes_max;
    if (label == kMaskPlaceholder) return cfg.num_classes_max + 1;
    if (label < 0 || label >= cfg.num_classes_max)
        throw DataError("target label " + std::to_string(label) + " exceeds num_classes_max " +
                        std::to_string(cfg.num_classes_max));
    return label;
}

void init_tab2d_params(ModelParams& params, const std::string& prefix, const ModelConfig& cfg,
                       Rng& rng) {
    cfg.validate();
    const std::int64_t l = cfg.embed_dim;
    const std::int64_t f = static_cast<std::int64_t>(cfg.ffn_mult) * l;
    const double emb_std = 1.0 / std::sqrt(static_cast<double>(l));

    params.add(prefix + "encoder.num_w", xavier({1, l}, rng));
    // A random bias keeps near-zero cells away from layer-norm's zero-variance
    // singularity (constant embeddings make the 1/sqrt(var+eps) factor, and
    // with it the loss curvature, explode).
    params.add(prefix + "encoder.num_b", Tensor::randn({l}, rng, emb_std));
    params.add(prefix + "encoder.cat_emb", Tensor::randn({cfg.max_categories + 1, l}, rng, emb_std));
    params.add(prefix + "encoder.tgt_emb",
               Tensor::randn({target_embedding_rows(cfg), l}, rng, emb_std));

    for (int b = 0; b < cfg.blocks; ++b) {
        const std::string bp = prefix + "block" + std::to_string(b) + ".";
        for (const char* attn : {"row.", "col."}) {
            params.add(bp + attn + "norm_g", Tensor::full({l}, 1.0));
            params.add(bp + attn + "norm_b", Tensor::zeros({l}));
            params.add(bp + attn + "wq", xavier({l, l}, rng));
            params.add(bp + attn + "wk", xavier({l, l}, rng));
            params.add(bp + attn + "wv", xavier({l, l}, rng));
            params.add(bp + attn + "wo", xavier({l, l}, rng));
        }
        params.add(bp + "ffn.norm_g", Tensor::full({l}, 1.0));
        params.add(bp + "ffn.norm_b", Tensor::zeros({l}));
        params.add(bp + "ffn.w1", xavier({l, f}, rng));
        params.add(bp + "ffn.b1", Tensor::zeros({f}));
        params.add(bp + "ffn.w2", xavier({f, l}, rng));
        params.add(bp + "ffn.b2", Tensor::zeros({l}));
    }
}

LatentCube embed_cells(const Table& table, const ModelParams& params, const std::string& prefix,
                       const ModelConfig& cfg) {
    const std::int64_t t = table.n_rows;
    const std::int64_t m = table.n_features();
    if (t < 1) throw DataError("embed_cells: empty table");
    if (!table.has_labels()) throw DataError("embed_cells: table lacks a target column");

    const Tensor& num_w = params.at(prefix + "encoder.num_w");
    const Tensor& num_b = params.at(prefix + "encoder.num_b");
    const Tensor& cat_emb = params.at(prefix + "encoder.cat_emb");
    const Tensor& tgt_emb = params.at(prefix + "encoder.tgt_emb");
    const std::int64_t l = cfg.embed_dim;

    std::vector<Tensor> columns;
    columns.reserve(static_cast<std::size_t>(m) + 1);
    for (std::int64_t c = 0; c < m; ++c) {
        const auto& schema = table.schema[static_cast<std::size_t>(c)];
        if (schema.kind == ColKind::numeric) {
            std::vector<double> vals(static_cast<std::size_t>(t));
            for (std::int64_t r = 0; r < t; ++r) {
                const double v = table.cell(r, c);
                if (!std::isfinite(v))
                    throw DataError("embed_cells: non-finite value in numeric column '" +
                                    schema.name + "'");
                vals[static_cast<std::size_t>(r)] = v;
            }
            Tensor col = add(matmul(Tensor::from_data({t, 1}, std::move(vals)), num_w), num_b);
            columns.push_back(reshape(col, {t, 1, l}));
        } else {
            std::vector<std::int64_t> ids(static_cast<std::size_t>(t));
            for (std::int64_t r = 0; r < t; ++r) {
                const double v = table.cell(r, c);
                if (!std::isfinite(v) || v < 0)
                    throw DataError("embed_cells: invalid category id in column '" + schema.name +
                                    "'");
                // Overflow buckets to the shared last slot.
                ids[static_cast<std::size_t>(r)] =
                    std::min<std::int64_t>(static_cast<std::int64_t>(v), cfg.max_categories);
            }
            columns.push_back(reshape(embedding_lookup(cat_emb, ids), {t, 1, l}));
        }
    }

    std::vector<std::int64_t> tgt_ids(static_cast<std::size_t>(t));
    for (std::int64_t r = 0; r < t; ++r)
        tgt_ids[static_cast<std::size_t>(r)] =
            target_embedding_id(table.labels[static_cast<std::size_t>(r)], cfg);
    columns.push_back(reshape(embedding_lookup(tgt_emb, tgt_ids), {t, 1, l}));

    return LatentCube{concat(columns, 1)};
}

namespace {

// Shared multi-head attention over `seq` tokens of width L, batched over
// `batch` independent groups. x is [batch*seq, L] flattened; returns the
// attention output in the same layout.
Tensor attention_core(const Tensor& x_flat, std::int64_t batch, std::int64_t seq,
                      const Tensor* mask_additive, const ModelParams& params,
                      const std::string& p, const ModelConfig& cfg) {
    const std::int64_t l = cfg.embed_dim;
    const std::int64_t h = cfg.heads;
    const std::int64_t dh = cfg.head_dim();

    const Tensor q = matmul(x_flat, params.at(p + "wq"));
    const Tensor k = matmul(x_flat, params.at(p + "wk"));
    const Tensor v = matmul(x_flat, params.at(p + "wv"));

    const auto split_heads = [&](const Tensor& z) {
        // [batch*seq, L] -> [batch*H, seq, dh]
        return reshape(permute(reshape(z, {batch, seq, h, dh}), {0, 2, 1, 3}), {batch * h, seq, dh});
    };
    const Tensor qh = split_heads(q);
    const Tensor kh = split_heads(k);
    const Tensor vh = split_heads(v);

    Tensor scores = scale(bmm(qh, permute(kh, {0, 2, 1})), 1.0 / std::sqrt(static_cast<double>(dh)));
    if (mask_additive) scores = add(scores, *mask_additive);
    const Tensor probs = softmax_lastdim(scores);
    const Tensor heads_out = bmm(probs, vh);  // [batch*H, seq, dh]

    const Tensor merged =
        reshape(permute(reshape(heads_out, {batch, h, seq, dh}), {0, 2, 1, 3}), {batch * seq, l});
    return matmul(merged, params.at(p + "wo"));
}

}  // namespace

LatentCube row_attention(const LatentCube& cube, const AttentionMask& mask,
                         const ModelParams& params, const std::string& prefix,
                         const ModelConfig& cfg) {
    const std::int64_t t = cube.rows(), c = cube.cols(), l = cube.latent_dim();
    if (mask.rows() != t)
        throw ShapeError("row_attention: mask rows " + std::to_string(mask.rows()) + " vs cube " +
                         std::to_string(t));
    const std::string p = prefix + "row.";
    const Tensor normed =
        layer_norm(cube.values, params.at(p + "norm_g"), params.at(p + "norm_b"));
    // Tokens are rows, batched per column: [t,c,l] -> [c, t, l].
    const Tensor by_col = reshape(permute(normed, {1, 0, 2}), {c * t, l});
    const Tensor mask_add = mask.additive();
    const Tensor attn = attention_core(by_col, c, t, &mask_add, params, p, cfg);
    const Tensor back = permute(reshape(attn, {c, t, l}), {1, 0, 2});
    return LatentCube{add(cube.values, back)};
}

LatentCube col_attention(const LatentCube& cube, const ModelParams& params,
                         const std::string& prefix, const ModelConfig& cfg) {
    const std::int64_t t = cube.rows(), c = cube.cols(), l = cube.latent_dim();
    const std::string p = prefix + "col.";
    const Tensor normed =
        layer_norm(cube.values, params.at(p + "norm_g"), params.at(p + "norm_b"));
    // Tokens are the M+1 cells of one row; rows are independent batches.
    const Tensor flat = reshape(normed, {t * c, l});
    const Tensor attn = attention_core(flat, t, c, nullptr, params, p, cfg);
    return LatentCube{add(cube.values, reshape(attn, {t, c, l}))};
}

LatentCube transformer_block(const LatentCube& cube, const AttentionMask& mask,
                             const ModelParams& params, const std::string& block_prefix,
                             const ModelConfig& cfg) {
    LatentCube x = row_attention(cube, mask, params, block_prefix, cfg);
    x = col_attention(x, params, block_prefix, cfg);

    const std::int64_t t = x.rows(), c = x.cols(), l = x.latent_dim();
    const std::string p = block_prefix + "ffn.";
    const Tensor normed = layer_norm(x.values, params.at(p + "norm_g"), params.at(p + "norm_b"));
    const Tensor flat = reshape(normed, {t * c, l});
    const Tensor hidden = gelu(add(matmul(flat, params.at(p + "w1")), params.at(p + "b1")));
    const Tensor out = add(matmul(hidden, params.at(p + "w2")), params.at(p + "b2"));
    return LatentCube{add(x.values, reshape(out, {t, c, l}))};
}

LatentCube run_stack(const LatentCube& cube, const AttentionMask& mask, const ModelParams& params,
                     const std::string& prefix, int n_blocks, const ModelConfig& cfg) {
    LatentCube x = cube;
    for (int b = 0; b < n_blocks; ++b)
        x = transformer_block(x, mask, params, prefix + "block" + std::to_string(b) + ".", cfg);
    return x;
}

}  // namespace taco
