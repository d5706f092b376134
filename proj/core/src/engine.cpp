#include "taco/engine.hpp"

#include <Eigen/Core>

#include <cmath>

#include "taco/tab2d.hpp"

namespace taco::engine {

namespace {

constexpr std::int64_t kQueryBlock = 256;   // streamed attention rows
constexpr std::int64_t kFfnChunk = 4096;    // cells per FFN chunk

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMap = Eigen::Map<const Mat<T>>;
template <typename T>
using StridedConstMap = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
std::vector<T> cast_tensor(const Tensor& t) {
    std::vector<T> out(t.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(t.values()[i]);
    return out;
}

template <typename T>
void load_module(const ModelParams& params, const std::string& prefix, const ModelConfig& cfg,
                 ModuleWeights<T>& w) {
    w.num_w = cast_tensor<T>(params.at(prefix + "encoder.num_w"));
    w.num_b = cast_tensor<T>(params.at(prefix + "encoder.num_b"));
    w.cat_emb = cast_tensor<T>(params.at(prefix + "encoder.cat_emb"));
    w.tgt_emb = cast_tensor<T>(params.at(prefix + "encoder.tgt_emb"));
    w.blocks.resize(static_cast<std::size_t>(cfg.blocks));
    for (int b = 0; b < cfg.blocks; ++b) {
        const std::string bp = prefix + "block" + std::to_string(b) + ".";
        BlockWeights<T>& bw = w.blocks[static_cast<std::size_t>(b)];
        bw.row_norm_g = cast_tensor<T>(params.at(bp + "row.norm_g"));
        bw.row_norm_b = cast_tensor<T>(params.at(bp + "row.norm_b"));
        bw.row_wq = cast_tensor<T>(params.at(bp + "row.wq"));
        bw.row_wk = cast_tensor<T>(params.at(bp + "row.wk"));
        bw.row_wv = cast_tensor<T>(params.at(bp + "row.wv"));
        bw.row_wo = cast_tensor<T>(params.at(bp + "row.wo"));
        bw.col_norm_g = cast_tensor<T>(params.at(bp + "col.norm_g"));
        bw.col_norm_b = cast_tensor<T>(params.at(bp + "col.norm_b"));
        bw.col_wq = cast_tensor<T>(params.at(bp + "col.wq"));
        bw.col_wk = cast_tensor<T>(params.at(bp + "col.wk"));
        bw.col_wv = cast_tensor<T>(params.at(bp + "col.wv"));
        bw.col_wo = cast_tensor<T>(params.at(bp + "col.wo"));
        bw.ffn_norm_g = cast_tensor<T>(params.at(bp + "ffn.norm_g"));
        bw.ffn_norm_b = cast_tensor<T>(params.at(bp + "ffn.norm_b"));
        bw.ffn_w1 = cast_tensor<T>(params.at(bp + "ffn.w1"));
        bw.ffn_b1 = cast_tensor<T>(params.at(bp + "ffn.b1"));
        bw.ffn_w2 = cast_tensor<T>(params.at(bp + "ffn.w2"));
        bw.ffn_b2 = cast_tensor<T>(params.at(bp + "ffn.b2"));
    }
}

constexpr double kLayerNormEps = 1e-5;

// Same formula and summation order as the training path.
template <typename T>
void layer_norm_cells(const Cube<T>& in, Cube<T>& out, const std::vector<T>& gamma,
                      const std::vector<T>& beta) {
    const std::int64_t l = in.latent;
    const std::int64_t cells = in.rows * in.cols;
    for (std::int64_t i = 0; i < cells; ++i) {
        const T* x = in.data.data() + i * l;
        T* y = out.data.data() + i * l;
        double mean = 0.0;
        for (std::int64_t d = 0; d < l; ++d) mean += static_cast<double>(x[d]);
        mean /= static_cast<double>(l);
        double var = 0.0;
        for (std::int64_t d = 0; d < l; ++d) {
            const double diff = static_cast<double>(x[d]) - mean;
            var += diff * diff;
        }
        var /= static_cast<double>(l);
        const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
        for (std::int64_t d = 0; d < l; ++d)
            y[d] = static_cast<T>(gamma[static_cast<std::size_t>(d)] *
                                      static_cast<T>((static_cast<double>(x[d]) - mean) * inv_std) +
                                  beta[static_cast<std::size_t>(d)]);
    }
}

template <typename T>
T gelu_scalar(T x) {
    return static_cast<T>(0.5) * x *
           (static_cast<T>(1) + static_cast<T>(std::erf(static_cast<double>(x) * 0.7071067811865475244)));
}

// Multi-head attention of `n_q` query rows (starting at q0 in `q`) over
// `n_ctx` context keys plus, when with_self, the query's own key/value.
// q,k,v: [rows, latent] for one column. out: [rows, latent], written for the
// query range only.
template <typename T>
void attend(const TrackedBuffer<T>& q, const TrackedBuffer<T>& k, const TrackedBuffer<T>& v,
            std::int64_t q0, std::int64_t n_q, std::int64_t n_ctx, bool with_self,
            const ModelConfig& cfg, TrackedBuffer<T>& out, TrackedBuffer<T>& scores,
            std::uint64_t& flop_sink) {
    const std::int64_t l = cfg.embed_dim;
    const std::int64_t h = cfg.heads;
    const std::int64_t dh = cfg.head_dim();
    const T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

    for (std::int64_t qb = q0; qb < q0 + n_q; qb += kQueryBlock) {
        const std::int64_t nb = std::min(kQueryBlock, q0 + n_q - qb);
        for (std::int64_t head = 0; head < h; ++head) {
            const std::int64_t off = head * dh;
            StridedConstMap<T> qh(q.data() + qb * l + off, nb, dh, Eigen::OuterStride<>(l));
            StridedConstMap<T> kh(k.data() + off, n_ctx, dh, Eigen::OuterStride<>(l));
            StridedConstMap<T> vh(v.data() + off, n_ctx, dh, Eigen::OuterStride<>(l));
            Map<T> s(scores.data(), nb, n_ctx);
            s.noalias() = qh * kh.transpose() * inv_sqrt_dh;
            flop_sink += static_cast<std::uint64_t>(2 * nb * n_ctx * dh);

            for (std::int64_t r = 0; r < nb; ++r) {
                T* srow = scores.data() + r * n_ctx;
                const T* qrow = q.data() + (qb + r) * l + off;
                double self_score = 0.0;
                if (with_self) {
                    const T* krow = k.data() + (qb + r) * l + off;
                    for (std::int64_t d = 0; d < dh; ++d)
                        self_score += static_cast<double>(qrow[d]) * static_cast<double>(krow[d]);
                    self_score *= static_cast<double>(inv_sqrt_dh);
                }
                // stable softmax over context (+ self)
                double mx = with_self ? self_score : -1e300;
                for (std::int64_t j = 0; j < n_ctx; ++j)
                    mx = std::max(mx, static_cast<double>(srow[j]));
                double sum = 0.0;
                for (std::int64_t j = 0; j < n_ctx; ++j) {
                    const double e = std::exp(static_cast<double>(srow[j]) - mx);
                    srow[j] = static_cast<T>(e);
                    sum += e;
                }
                double self_p = 0.0;
                if (with_self) {
                    self_p = std::exp(self_score - mx);
                    sum += self_p;
                }
                const T inv_sum = static_cast<T>(1.0 / sum);
                for (std::int64_t j = 0; j < n_ctx; ++j) srow[j] *= inv_sum;

                T* orow = out.data() + (qb + r) * l + off;
                StridedConstMap<T> vh_r(v.data() + off, n_ctx, dh, Eigen::OuterStride<>(l));
                Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> dst(orow, dh);
                Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> weights(srow, n_ctx);
                dst.noalias() = weights * vh_r;
                if (with_self) {
                    const T* vrow = v.data() + (qb + r) * l + off;
                    const T ps = static_cast<T>(self_p / sum);
                    for (std::int64_t d = 0; d < dh; ++d) dst(d) += ps * vrow[d];
                }
            }
            flop_sink += static_cast<std::uint64_t>(2 * nb * n_ctx * dh);
            if (with_self) flop_sink += static_cast<std::uint64_t>(4 * nb * dh);
        }
    }
}

template <typename T>
struct RowAttnScratch {
    Cube<T> normed;
    TrackedBuffer<T> x_col, q_col, k_col, v_col, attn_col, y_col, scores;

    void prepare(std::int64_t rows, std::int64_t cols, std::int64_t l, std::int64_t max_ctx) {
        normed.resize(rows, cols, l);
        x_col.resize(static_cast<std::size_t>(rows * l));
        q_col.resize(static_cast<std::size_t>(rows * l));
        k_col.resize(static_cast<std::size_t>(rows * l));
        v_col.resize(static_cast<std::size_t>(rows * l));
        attn_col.resize(static_cast<std::size_t>(rows * l));
        y_col.resize(static_cast<std::size_t>(rows * l));
        scores.resize(static_cast<std::size_t>(std::min(kQueryBlock, rows) * max_ctx));
    }
};

// Row-wise attention sublayer. When `cache_out` is set, the K/V of rows
// [0, ctx_rows) are appended for this block (cache build). When `cache_in`
// is set, context K/V come from the cache instead of the cube (which then
// holds query rows only).
template <typename T>
void row_attention_pass(Cube<T>& cube, const BlockWeights<T>& bw, const ModelConfig& cfg,
                        std::int64_t ctx_rows, RowAttnScratch<T>& ws, FlopCounters* flops,
                        TrackedBuffer<T>* cache_k_out, TrackedBuffer<T>* cache_v_out,
                        const TrackedBuffer<T>* cache_k_in, const TrackedBuffer<T>* cache_v_in,
                        std::int64_t cached_rows) {
    const std::int64_t rows = cube.rows, cols = cube.cols, l = cube.latent;
    layer_norm_cells(cube, ws.normed, bw.row_norm_g, bw.row_norm_b);

    std::uint64_t ctx_flops = 0, query_flops = 0, proj_flops = 0;
    for (std::int64_t c = 0; c < cols; ++c) {
        // gather this column's tokens
        for (std::int64_t r = 0; r < rows; ++r)
            std::copy_n(ws.normed.cell(r, c), l, ws.x_col.data() + r * l);

        ConstMap<T> x(ws.x_col.data(), rows, l);
        ConstMap<T> wq(bw.row_wq.data(), l, l), wk(bw.row_wk.data(), l, l),
            wv(bw.row_wv.data(), l, l), wo(bw.row_wo.data(), l, l);
        Map<T>(ws.q_col.data(), rows, l).noalias() = x * wq;
        Map<T>(ws.k_col.data(), rows, l).noalias() = x * wk;
        Map<T>(ws.v_col.data(), rows, l).noalias() = x * wv;
        proj_flops += static_cast<std::uint64_t>(3 * 2 * rows * l * l);

        if (cache_k_out) {
            std::copy_n(ws.k_col.data(), ctx_rows * l, cache_k_out->data() + c * ctx_rows * l);
            std::copy_n(ws.v_col.data(), ctx_rows * l, cache_v_out->data() + c * ctx_rows * l);
        }

        if (cache_k_in) {
            // query-only pass: all cube rows attend to cached context + self
            const std::int64_t h = cfg.heads;
            const std::int64_t dh = cfg.head_dim();
            const T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
            const T* ck = cache_k_in->data() + c * cached_rows * l;
            const T* cv = cache_v_in->data() + c * cached_rows * l;
            for (std::int64_t qb = 0; qb < rows; qb += kQueryBlock) {
                const std::int64_t nb = std::min(kQueryBlock, rows - qb);
                for (std::int64_t head = 0; head < h; ++head) {
                    const std::int64_t off = head * dh;
                    StridedConstMap<T> qh(ws.q_col.data() + qb * l + off, nb, dh,
                                          Eigen::OuterStride<>(l));
                    StridedConstMap<T> kh(ck + off, cached_rows, dh, Eigen::OuterStride<>(l));
                    StridedConstMap<T> vh(cv + off, cached_rows, dh, Eigen::OuterStride<>(l));
                    Map<T> s(ws.scores.data(), nb, cached_rows);
                    s.noalias() = qh * kh.transpose() * inv_sqrt_dh;
                    query_flops += static_cast<std::uint64_t>(2 * nb * cached_rows * dh);
                    for (std::int64_t r = 0; r < nb; ++r) {
                        T* srow = ws.scores.data() + r * cached_rows;
                        const T* qrow = ws.q_col.data() + (qb + r) * l + off;
                        const T* krow = ws.k_col.data() + (qb + r) * l + off;
                        double self_score = 0.0;
                        for (std::int64_t d = 0; d < dh; ++d)
                            self_score += static_cast<double>(qrow[d]) * static_cast<double>(krow[d]);
                        self_score *= static_cast<double>(inv_sqrt_dh);
                        double mx = self_score;
                        for (std::int64_t j = 0; j < cached_rows; ++j)
                            mx = std::max(mx, static_cast<double>(srow[j]));
                        double sum = 0.0;
                        for (std::int64_t j = 0; j < cached_rows; ++j) {
                            const double e = std::exp(static_cast<double>(srow[j]) - mx);
                            srow[j] = static_cast<T>(e);
                            sum += e;
                        }
                        const double self_p = std::exp(self_score - mx);
                        sum += self_p;
                        const T inv_sum = static_cast<T>(1.0 / sum);
                        for (std::int64_t j = 0; j < cached_rows; ++j) srow[j] *= inv_sum;
                        T* orow = ws.attn_col.data() + (qb + r) * l + off;
                        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> dst(orow, dh);
                        Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> weights(srow,
                                                                                      cached_rows);
                        dst.noalias() = weights * vh;
                        const T* vrow = ws.v_col.data() + (qb + r) * l + off;
                        const T ps = static_cast<T>(self_p / sum);
                        for (std::int64_t d = 0; d < dh; ++d) dst(d) += ps * vrow[d];
                    }
                    query_flops += static_cast<std::uint64_t>(2 * nb * cached_rows * dh + 4 * nb * dh);
                }
            }
        } else {
            // context rows attend among themselves
            if (ctx_rows > 0)
                attend(ws.q_col, ws.k_col, ws.v_col, 0, ctx_rows, ctx_rows, false, cfg, ws.attn_col,
                       ws.scores, ctx_flops);
            // query rows attend to the context plus themselves
            if (rows > ctx_rows)
                attend(ws.q_col, ws.k_col, ws.v_col, ctx_rows, rows - ctx_rows, ctx_rows, true, cfg,
                       ws.attn_col, ws.scores, query_flops);
        }

        Map<T>(ws.y_col.data(), rows, l).noalias() = ConstMap<T>(ws.attn_col.data(), rows, l) * wo;
        proj_flops += static_cast<std::uint64_t>(2 * rows * l * l);
        for (std::int64_t r = 0; r < rows; ++r) {
            T* dst = cube.cell(r, c);
            const T* src = ws.y_col.data() + r * l;
            for (std::int64_t d = 0; d < l; ++d) dst[d] += src[d];
        }
    }
    if (flops) {
        flops->row_attn_ctx_ctx += ctx_flops;
        flops->row_attn_query += query_flops;
        flops->proj += proj_flops;
    }
}

template <typename T>
void col_attention_pass(Cube<T>& cube, const BlockWeights<T>& bw, const ModelConfig& cfg,
                        Cube<T>& normed, FlopCounters* flops) {
    const std::int64_t rows = cube.rows, cols = cube.cols, l = cube.latent;
    const std::int64_t h = cfg.heads, dh = cfg.head_dim();
    const T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    layer_norm_cells(cube, normed, bw.col_norm_g, bw.col_norm_b);

    TrackedBuffer<T> q(static_cast<std::size_t>(cols * l)), k(static_cast<std::size_t>(cols * l)),
        v(static_cast<std::size_t>(cols * l)), attn(static_cast<std::size_t>(cols * l)),
        y(static_cast<std::size_t>(cols * l)), scores(static_cast<std::size_t>(cols * cols));
    ConstMap<T> wq(bw.col_wq.data(), l, l), wk(bw.col_wk.data(), l, l), wv(bw.col_wv.data(), l, l),
        wo(bw.col_wo.data(), l, l);

    for (std::int64_t r = 0; r < rows; ++r) {
        ConstMap<T> x(normed.cell(r, 0), cols, l);  // row cells are contiguous
        Map<T>(q.data(), cols, l).noalias() = x * wq;
        Map<T>(k.data(), cols, l).noalias() = x * wk;
        Map<T>(v.data(), cols, l).noalias() = x * wv;

        for (std::int64_t head = 0; head < h; ++head) {
            const std::int64_t off = head * dh;
            StridedConstMap<T> qh(q.data() + off, cols, dh, Eigen::OuterStride<>(l));
            StridedConstMap<T> kh(k.data() + off, cols, dh, Eigen::OuterStride<>(l));
            StridedConstMap<T> vh(v.data() + off, cols, dh, Eigen::OuterStride<>(l));
            Map<T> s(scores.data(), cols, cols);
            s.noalias() = qh * kh.transpose() * inv_sqrt_dh;
            for (std::int64_t i = 0; i < cols; ++i) {
                T* srow = scores.data() + i * cols;
                double mx = static_cast<double>(srow[0]);
                for (std::int64_t j = 1; j < cols; ++j) mx = std::max(mx, static_cast<double>(srow[j]));
                double sum = 0.0;
                for (std::int64_t j = 0; j < cols; ++j) {
                    const double e = std::exp(static_cast<double>(srow[j]) - mx);
                    srow[j] = static_cast<T>(e);
                    sum += e;
                }
                const T inv_sum = static_cast<T>(1.0 / sum);
                for (std::int64_t j = 0; j < cols; ++j) srow[j] *= inv_sum;
            }
            Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>> oh(attn.data() + off, cols, dh,
                                                           Eigen::OuterStride<>(l));
            oh.noalias() = ConstMap<T>(scores.data(), cols, cols) * vh;
        }
        Map<T>(y.data(), cols, l).noalias() = ConstMap<T>(attn.data(), cols, l) * wo;
        T* dst = cube.cell(r, 0);
        const T* src = y.data();
        for (std::int64_t i = 0; i < cols * l; ++i) dst[i] += src[i];
    }
    if (flops) {
        flops->col_attn += static_cast<std::uint64_t>(rows * h * 4 * cols * cols * dh);
        flops->proj += static_cast<std::uint64_t>(rows * 4 * 2 * cols * l * l);
    }
}

template <typename T>
void ffn_pass(Cube<T>& cube, const BlockWeights<T>& bw, const ModelConfig& cfg, Cube<T>& normed,
              FlopCounters* flops) {
    const std::int64_t l = cube.latent;
    const std::int64_t f = static_cast<std::int64_t>(cfg.ffn_mult) * l;
    const std::int64_t cells = cube.rows * cube.cols;
    layer_norm_cells(cube, normed, bw.ffn_norm_g, bw.ffn_norm_b);

    TrackedBuffer<T> hidden(static_cast<std::size_t>(std::min(cells, kFfnChunk) * f));
    TrackedBuffer<T> out(static_cast<std::size_t>(std::min(cells, kFfnChunk) * l));
    ConstMap<T> w1(bw.ffn_w1.data(), l, f), w2(bw.ffn_w2.data(), f, l);

    for (std::int64_t start = 0; start < cells; start += kFfnChunk) {
        const std::int64_t n = std::min(kFfnChunk, cells - start);
        ConstMap<T> x(normed.data.data() + start * l, n, l);
        Map<T> hm(hidden.data(), n, f);
        hm.noalias() = x * w1;
        for (std::int64_t i = 0; i < n; ++i) {
            T* hrow = hidden.data() + i * f;
            for (std::int64_t j = 0; j < f; ++j)
                hrow[j] = gelu_scalar<T>(hrow[j] + bw.ffn_b1[static_cast<std::size_t>(j)]);
        }
        Map<T> om(out.data(), n, l);
        om.noalias() = hm * w2;
        T* dst = cube.data.data() + start * l;
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < l; ++j)
                dst[i * l + j] += out[static_cast<std::size_t>(i * l + j)] +
                                  bw.ffn_b2[static_cast<std::size_t>(j)];
    }
    if (flops) flops->ffn += static_cast<std::uint64_t>(cells * 4 * l * f);
}

}  // namespace

template <typename T>
EngineModel<T> EngineModel<T>::from_params(const ModelParams& params, const ModelConfig& cfg,
                                           bool with_compressor) {
    EngineModel<T> m;
    m.cfg = cfg;
    m.has_compressor = with_compressor;
    if (with_compressor) {
        load_module(params, "compressor.", cfg, m.compressor);
        m.bridge_w1 = cast_tensor<T>(params.at("bridge.w1"));
        m.bridge_w2 = cast_tensor<T>(params.at("bridge.w2"));
    }
    load_module(params, "predictor.", cfg, m.predictor);
    m.head_norm_g = cast_tensor<T>(params.at("predictor.head.norm_g"));
    m.head_norm_b = cast_tensor<T>(params.at("predictor.head.norm_b"));
    m.head_w = cast_tensor<T>(params.at("predictor.head.w"));
    m.head_b = cast_tensor<T>(params.at("predictor.head.b"));
    return m;
}

template <typename T>
Cube<T> embed_table(const Table& table, const ModuleWeights<T>& w, const ModelConfig& cfg,
                    std::optional<int> label_override, FlopCounters* flops) {
    const std::int64_t rows = table.n_rows;
    const std::int64_t m = table.n_features();
    const std::int64_t l = cfg.embed_dim;
    Cube<T> cube;
    cube.resize(rows, m + 1, l);
    std::uint64_t encoder_flops = 0;

    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t c = 0; c < m; ++c) {
            T* dst = cube.cell(r, c);
            const double v = table.cell(r, c);
            if (!std::isfinite(v))
                throw DataError("engine: non-finite value in column '" +
                                table.schema[static_cast<std::size_t>(c)].name + "'");
            if (table.schema[static_cast<std::size_t>(c)].kind == ColKind::numeric) {
                const T tv = static_cast<T>(v);
                for (std::int64_t d = 0; d < l; ++d)
                    dst[d] = tv * w.num_w[static_cast<std::size_t>(d)] +
                             w.num_b[static_cast<std::size_t>(d)];
                encoder_flops += static_cast<std::uint64_t>(2 * l);
            } else {
                const auto id = std::min<std::int64_t>(static_cast<std::int64_t>(v),
                                                       cfg.max_categories);
                std::copy_n(w.cat_emb.data() + id * l, l, dst);
            }
        }
        const int label = label_override ? *label_override
                                         : table.labels[static_cast<std::size_t>(r)];
        const std::int64_t tid = target_embedding_id(label, cfg);
        std::copy_n(w.tgt_emb.data() + tid * l, l, cube.cell(r, m));
    }
    if (flops) flops->encoder += encoder_flops;
    return cube;
}

template <typename T>
void run_blocks(Cube<T>& cube, const ModuleWeights<T>& w, const ModelConfig& cfg,
                std::int64_t ctx_rows, FlopCounters* flops) {
    RowAttnScratch<T> ws;
    ws.prepare(cube.rows, cube.cols, cube.latent, std::max<std::int64_t>(ctx_rows, 1));
    for (const BlockWeights<T>& bw : w.blocks) {
        row_attention_pass(cube, bw, cfg, ctx_rows, ws, flops,
                           static_cast<TrackedBuffer<T>*>(nullptr),
                           static_cast<TrackedBuffer<T>*>(nullptr),
                           static_cast<const TrackedBuffer<T>*>(nullptr),
                           static_cast<const TrackedBuffer<T>*>(nullptr), 0);
        col_attention_pass(cube, bw, cfg, ws.normed, flops);
        ffn_pass(cube, bw, cfg, ws.normed, flops);
    }
}

template <typename T>
KVCache<T> build_kv_cache(Cube<T> context, const ModuleWeights<T>& w, const ModelConfig& cfg,
                          FlopCounters* flops) {
    KVCache<T> cache;
    cache.ctx_rows = context.rows;
    cache.cols = context.cols;
    cache.latent = context.latent;
    cache.keys.reserve(w.blocks.size());
    cache.values.reserve(w.blocks.size());
    RowAttnScratch<T> ws;
    ws.prepare(context.rows, context.cols, context.latent, context.rows);
    for (const BlockWeights<T>& bw : w.blocks) {
        TrackedBuffer<T> k(static_cast<std::size_t>(context.rows * context.cols * context.latent));
        TrackedBuffer<T> v(static_cast<std::size_t>(context.rows * context.cols * context.latent));
        row_attention_pass(context, bw, cfg, context.rows, ws, flops, &k, &v,
                           static_cast<const TrackedBuffer<T>*>(nullptr),
                           static_cast<const TrackedBuffer<T>*>(nullptr), 0);
        cache.keys.push_back(std::move(k));
        cache.values.push_back(std::move(v));
        col_attention_pass(context, bw, cfg, ws.normed, flops);
        ffn_pass(context, bw, cfg, ws.normed, flops);
    }
    return cache;
}

template <typename T>
void run_blocks_cached(Cube<T>& test, const KVCache<T>& cache, const ModuleWeights<T>& w,
                       const ModelConfig& cfg, FlopCounters* flops) {
    if (test.cols != cache.cols || test.latent != cache.latent)
        throw ShapeError("run_blocks_cached: cube/cache geometry mismatch");
    RowAttnScratch<T> ws;
    ws.prepare(test.rows, test.cols, test.latent, cache.ctx_rows);
    for (std::size_t b = 0; b < w.blocks.size(); ++b) {
        const BlockWeights<T>& bw = w.blocks[b];
        row_attention_pass(test, bw, cfg, std::int64_t{0}, ws, flops,
                           static_cast<TrackedBuffer<T>*>(nullptr),
                           static_cast<TrackedBuffer<T>*>(nullptr), &cache.keys[b],
                           &cache.values[b], cache.ctx_rows);
        col_attention_pass(test, bw, cfg, ws.normed, flops);
        ffn_pass(test, bw, cfg, ws.normed, flops);
    }
}

template <typename T>
void apply_bridge(Cube<T>& cube, const EngineModel<T>& model, FlopCounters* flops) {
    const std::int64_t l = cube.latent;
    const std::int64_t f = static_cast<std::int64_t>(model.cfg.ffn_mult) * l;
    const std::int64_t cells = cube.rows * cube.cols;
    ConstMap<T> w1(model.bridge_w1.data(), l, f), w2(model.bridge_w2.data(), f, l);
    TrackedBuffer<T> hidden(static_cast<std::size_t>(std::min(cells, kFfnChunk) * f));
    TrackedBuffer<T> out(static_cast<std::size_t>(std::min(cells, kFfnChunk) * l));
    for (std::int64_t start = 0; start < cells; start += kFfnChunk) {
        const std::int64_t n = std::min(kFfnChunk, cells - start);
        ConstMap<T> x(cube.data.data() + start * l, n, l);
        Map<T> hm(hidden.data(), n, f);
        hm.noalias() = x * w1;
        for (std::int64_t i = 0; i < n * f; ++i) hidden[static_cast<std::size_t>(i)] =
            gelu_scalar<T>(hidden[static_cast<std::size_t>(i)]);
        Map<T> om(out.data(), n, l);
        om.noalias() = hm * w2;
        T* dst = cube.data.data() + start * l;
        for (std::int64_t i = 0; i < n * l; ++i) dst[i] += out[static_cast<std::size_t>(i)];
    }
    if (flops) flops->ffn += static_cast<std::uint64_t>(cells * 4 * l * f);
}

template <typename T>
std::vector<double> readout_probs(const Cube<T>& test_rows_out, const EngineModel<T>& model,
                                  int n_classes, FlopCounters* flops) {
    const std::int64_t rows = test_rows_out.rows;
    const std::int64_t l = test_rows_out.latent;
    const std::int64_t cmax = model.cfg.num_classes_max;
    std::vector<double> probs(static_cast<std::size_t>(rows * n_classes));
    std::vector<double> normed(static_cast<std::size_t>(l));
    std::vector<double> logits(static_cast<std::size_t>(n_classes));
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* x = test_rows_out.cell(r, test_rows_out.cols - 1);
        double mean = 0.0;
        for (std::int64_t d = 0; d < l; ++d) mean += static_cast<double>(x[d]);
        mean /= static_cast<double>(l);
        double var = 0.0;
        for (std::int64_t d = 0; d < l; ++d) {
            const double diff = static_cast<double>(x[d]) - mean;
            var += diff * diff;
        }
        var /= static_cast<double>(l);
        const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
        for (std::int64_t d = 0; d < l; ++d)
            normed[static_cast<std::size_t>(d)] =
                static_cast<double>(model.head_norm_g[static_cast<std::size_t>(d)]) *
                    (static_cast<double>(x[d]) - mean) * inv_std +
                static_cast<double>(model.head_norm_b[static_cast<std::size_t>(d)]);
        for (int c = 0; c < n_classes; ++c) {
            double z = static_cast<double>(model.head_b[static_cast<std::size_t>(c)]);
            for (std::int64_t d = 0; d < l; ++d)
                z += normed[static_cast<std::size_t>(d)] *
                     static_cast<double>(model.head_w[static_cast<std::size_t>(d * cmax + c)]);
            logits[static_cast<std::size_t>(c)] = z;
        }
        double mx = logits[0];
        for (int c = 1; c < n_classes; ++c) mx = std::max(mx, logits[static_cast<std::size_t>(c)]);
        double sum = 0.0;
        for (int c = 0; c < n_classes; ++c) {
            const double e = std::exp(logits[static_cast<std::size_t>(c)] - mx);
            probs[static_cast<std::size_t>(r * n_classes + c)] = e;
            sum += e;
        }
        for (int c = 0; c < n_classes; ++c) probs[static_cast<std::size_t>(r * n_classes + c)] /= sum;
    }
    if (flops) flops->proj += static_cast<std::uint64_t>(rows * 2 * l * n_classes);
    return probs;
}

// explicit instantiations
template struct EngineModel<float>;
template struct EngineModel<double>;
template Cube<float> embed_table<float>(const Table&, const ModuleWeights<float>&,
                                        const ModelConfig&, std::optional<int>, FlopCounters*);
template Cube<double> embed_table<double>(const Table&, const ModuleWeights<double>&,
                                          const ModelConfig&, std::optional<int>, FlopCounters*);
template void run_blocks<float>(Cube<float>&, const ModuleWeights<float>&, const ModelConfig&,
                                std::int64_t, FlopCounters*);
template void run_blocks<double>(Cube<double>&, const ModuleWeights<double>&, const ModelConfig&,
                                 std::int64_t, FlopCounters*);
template KVCache<float> build_kv_cache<float>(Cube<float>, const ModuleWeights<float>&,
                                              const ModelConfig&, FlopCounters*);
template KVCache<double> build_kv_cache<double>(Cube<double>, const ModuleWeights<double>&,
                                                const ModelConfig&, FlopCounters*);
template void run_blocks_cached<float>(Cube<float>&, const KVCache<float>&,
                                       const ModuleWeights<float>&, const ModelConfig&,
                                       FlopCounters*);
template void run_blocks_cached<double>(Cube<double>&, const KVCache<double>&,
                                        const ModuleWeights<double>&, const ModelConfig&,
                                        FlopCounters*);
template void apply_bridge<float>(Cube<float>&, const EngineModel<float>&, FlopCounters*);
template void apply_bridge<double>(Cube<double>&, const EngineModel<double>&, FlopCounters*);
template std::vector<double> readout_probs<float>(const Cube<float>&, const EngineModel<float>&,
                                                  int, FlopCounters*);
template std::vector<double> readout_probs<double>(const Cube<double>&, const EngineModel<double>&,
                                                   int, FlopCounters*);

}  // namespace taco::engine
