#include "taco/infer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <variant>

#include "taco/checkpoint.hpp"

namespace taco {

std::string to_string(InferMode mode) {
    switch (mode) {
        case InferMode::taco: return "taco";
        case InferMode::pot: return "pot";
        case InferMode::random: return "random";
        case InferMode::knn: return "knn";
    }
    return "?";
}

InferMode infer_mode_from_string(const std::string& name) {
    if (name == "taco") return InferMode::taco;
    if (name == "pot") return InferMode::pot;
    if (name == "random") return InferMode::random;
    if (name == "knn") return InferMode::knn;
    throw ConfigError("unknown mode '" + name + "' (expected taco|pot|random|knn)");
}

std::string timing_to_json(const TimingRecord& r) {
    std::ostringstream os;
    os << "{\"phase\":\"" << r.phase << "\",\"wall_ms\":" << r.wall_ms
       << ",\"peak_bytes\":" << r.peak_bytes << ",\"mode\":\"" << r.mode << "\",\"N\":" << r.n
       << ",\"M\":" << r.m << ",\"K\":" << r.k << ",\"cached\":" << (r.cached ? "true" : "false")
       << "}";
    return os.str();
}

void append_timing(const std::string& path, const TimingRecord& record) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoError("append_timing: cannot open '" + path + "'");
    out << timing_to_json(record) << '\n';
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

template <typename T>
struct Fitted {
    engine::EngineModel<T> model;
    engine::Cube<T> context;  // taco: bridged latents; pot: embedded train
    std::optional<engine::KVCache<T>> kv;
};

}  // namespace

struct FittedState::Impl {
    InferMode mode = InferMode::taco;
    Precision precision = Precision::f32;
    ModelConfig cfg;
    int n_classes = 0;
    PreprocessStats stats;
    std::int64_t n_train = 0, n_features = 0, k = 0;
    TimingRecord fit_record;
    bool first_predict_done = false;
    engine::FlopCounters flops;
    std::uint64_t seed = 0;

    std::variant<Fitted<float>, Fitted<double>> state;
    Table subset;    // random mode: raw preprocessed subset with labels
    Table train_pp;  // knn mode: full preprocessed train

    template <typename T>
    Fitted<T>& as() {
        return std::get<Fitted<T>>(state);
    }
};

FittedState::FittedState() : impl(std::make_unique<Impl>()) {}
FittedState::~FittedState() = default;
FittedState::FittedState(FittedState&&) noexcept = default;
FittedState& FittedState::operator=(FittedState&&) noexcept = default;

InferMode FittedState::mode() const { return impl->mode; }
std::int64_t FittedState::n_train() const { return impl->n_train; }
std::int64_t FittedState::context_rows() const { return impl->k; }
int FittedState::n_classes() const { return impl->n_classes; }
const TimingRecord& FittedState::fit_record() const { return impl->fit_record; }
const engine::FlopCounters& FittedState::flops() const { return impl->flops; }
void FittedState::reset_flops() { impl->flops = {}; }

std::int64_t FittedState::kv_token_count() const {
    if (auto* f = std::get_if<Fitted<float>>(&impl->state); f && f->kv) return f->kv->token_count();
    if (auto* d = std::get_if<Fitted<double>>(&impl->state); d && d->kv) return d->kv->token_count();
    return 0;
}

std::int64_t chunk_policy(std::int64_t n) {
    if (n < 1) throw DataError("chunk_policy: N must be >= 1");
    if (n < 2000) return 500;
    if (n < 10000) return 1000;
    if (n < 20000) return 5000;
    return 10000;
}

ChunkPlan plan_chunks(std::int64_t n, double rate, int min_k,
                      std::optional<std::int64_t> chunk_size) {
    if (rate <= 0.0 || rate > 1.0) throw ConfigError("plan_chunks: rate outside (0,1]");
    ChunkPlan plan;
    plan.chunk_size = chunk_size.value_or(chunk_policy(n));
    for (std::int64_t start = 0; start < n; start += plan.chunk_size) {
        const std::int64_t len = std::min(plan.chunk_size, n - start);
        plan.chunks.emplace_back(start, len);
        const std::int64_t kc = k_for_rate(rate, len, min_k);
        plan.k_per_chunk.push_back(kc);
        plan.total_k += kc;
    }
    return plan;
}

namespace {

// Engine-path compression of one table: embed train rows (real labels) plus
// dummy rows (masked targets), full bidirectional blocks, keep the last K.
template <typename T>
engine::Cube<T> compress_engine(const Table& train_pp, std::int64_t k, std::uint64_t seed,
                                const engine::EngineModel<T>& model, engine::FlopCounters* flops) {
    Rng rng(seed);
    const DummyTable dummy = init_dummy(train_pp, k, rng);
    engine::Cube<T> cube =
        engine::embed_table(train_pp, model.compressor, model.cfg, std::nullopt, flops);
    engine::Cube<T> dummy_cube =
        engine::embed_table(dummy.rows, model.compressor, model.cfg, std::nullopt, flops);

    engine::Cube<T> joint;
    joint.resize(cube.rows + dummy_cube.rows, cube.cols, cube.latent);
    std::copy_n(cube.data.data(), cube.rows * cube.cols * cube.latent, joint.data.data());
    std::copy_n(dummy_cube.data.data(), dummy_cube.rows * cube.cols * cube.latent,
                joint.data.data() + cube.rows * cube.cols * cube.latent);
    engine::run_blocks(joint, model.compressor, model.cfg, joint.rows, flops);

    engine::Cube<T> latents;
    latents.resize(k, cube.cols, cube.latent);
    std::copy_n(joint.cell(cube.rows, 0), k * cube.cols * cube.latent, latents.data.data());
    return latents;
}

template <typename T>
engine::Cube<T> compress_chunked_engine(const Table& train_pp, std::uint64_t seed,
                                        const engine::EngineModel<T>& model,
                                        engine::FlopCounters* flops, const ChunkPlan& plan) {
    engine::Cube<T> stitched;
    const std::int64_t cols = train_pp.n_features() + 1;
    stitched.resize(plan.total_k, cols, model.cfg.embed_dim);
    std::int64_t out_row = 0;
    for (std::size_t ci = 0; ci < plan.chunks.size(); ++ci) {
        const auto [start, len] = plan.chunks[ci];
        std::vector<std::int64_t> rows(static_cast<std::size_t>(len));
        std::iota(rows.begin(), rows.end(), start);
        const Table chunk = train_pp.select_rows(rows);
        const std::uint64_t chunk_seed = Rng::derive({seed, 0x4348554eu /* CHUN */, ci});
        engine::Cube<T> latents =
            compress_engine<T>(chunk, plan.k_per_chunk[ci], chunk_seed, model, flops);
        std::copy_n(latents.data.data(), latents.rows * cols * model.cfg.embed_dim,
                    stitched.cell(out_row, 0));
        out_row += latents.rows;
    }
    return stitched;
}

template <typename T>
void fit_impl(FittedState::Impl& impl, const Table& train_pp, const FitOptions& options,
              const ModelParams& params) {
    Fitted<T> fitted;
    fitted.model =
        engine::EngineModel<T>::from_params(params, impl.cfg, options.mode == InferMode::taco);

    if (options.mode == InferMode::taco) {
        if (options.chunking) {
            const ChunkPlan plan = plan_chunks(train_pp.n_rows, options.rate, options.min_k);
            fitted.context = compress_chunked_engine<T>(train_pp, options.seed, fitted.model,
                                                        &impl.flops, plan);
        } else {
            const std::int64_t k = k_for_rate(options.rate, train_pp.n_rows, options.min_k);
            fitted.context =
                compress_engine<T>(train_pp, k, Rng::derive({options.seed, 0x434f4d50u}),
                                   fitted.model, &impl.flops);
        }
        engine::apply_bridge(fitted.context, fitted.model, &impl.flops);
        impl.k = fitted.context.rows;
    } else {  // pot
        fitted.context = engine::embed_table(train_pp, fitted.model.predictor, impl.cfg,
                                             std::nullopt, &impl.flops);
        impl.k = train_pp.n_rows;
    }

    if (options.kv_cache) {
        engine::Cube<T> ctx_copy;
        ctx_copy.resize(fitted.context.rows, fitted.context.cols, fitted.context.latent);
        std::copy_n(fitted.context.data.data(),
                    fitted.context.rows * fitted.context.cols * fitted.context.latent,
                    ctx_copy.data.data());
        fitted.kv = engine::build_kv_cache(std::move(ctx_copy), fitted.model.predictor, impl.cfg,
                                           &impl.flops);
    }
    impl.state = std::move(fitted);
}

template <typename T>
PredictResult predict_impl(FittedState::Impl& impl, const Table& test_pp) {
    Fitted<T>& fitted = std::get<Fitted<T>>(impl.state);
    const ModelConfig& cfg = impl.cfg;
    PredictResult result;
    result.n_classes = impl.n_classes;

    engine::Cube<T> ctx_view;  // random/knn rebuild the context every call
    const engine::Cube<T>* context = &fitted.context;
    if (impl.mode == InferMode::random) {
        ctx_view = engine::embed_table(impl.subset, fitted.model.predictor, cfg, std::nullopt,
                                       &impl.flops);
        context = &ctx_view;
    } else if (impl.mode == InferMode::knn) {
        const Table selected = baseline_knn(impl.train_pp, test_pp, impl.k);
        ctx_view = engine::embed_table(selected, fitted.model.predictor, cfg, std::nullopt,
                                       &impl.flops);
        context = &ctx_view;
    }

    engine::Cube<T> test_cube =
        engine::embed_table(test_pp, fitted.model.predictor, cfg, kMissingTarget, &impl.flops);

    if (fitted.kv) {
        engine::run_blocks_cached(test_cube, *fitted.kv, fitted.model.predictor, cfg, &impl.flops);
        result.probabilities =
            engine::readout_probs(test_cube, fitted.model, impl.n_classes, &impl.flops);
    } else {
        engine::Cube<T> joint;
        joint.resize(context->rows + test_cube.rows, test_cube.cols, test_cube.latent);
        std::copy_n(context->data.data(), context->rows * context->cols * context->latent,
                    joint.data.data());
        std::copy_n(test_cube.data.data(), test_cube.rows * test_cube.cols * test_cube.latent,
                    joint.data.data() + context->rows * context->cols * context->latent);
        engine::run_blocks(joint, fitted.model.predictor, cfg, context->rows, &impl.flops);
        engine::Cube<T> out;
        out.resize(test_cube.rows, test_cube.cols, test_cube.latent);
        std::copy_n(joint.cell(context->rows, 0), test_cube.rows * test_cube.cols * test_cube.latent,
                    out.data.data());
        result.probabilities = engine::readout_probs(out, fitted.model, impl.n_classes, &impl.flops);
    }
    return result;
}

}  // namespace

FittedState fit(const Table& train, const FitOptions& options, const ModelParams& params,
                const ModelConfig& cfg) {
    cfg.validate();
    if (!train.has_labels() || train.num_classes < 2)
        throw DataError("fit: training table needs labels with at least 2 classes");
    if (train.num_classes > cfg.num_classes_max)
        throw ConfigError("fit: " + std::to_string(train.num_classes) +
                          " classes exceeds num_classes_max");
    if (options.mode == InferMode::taco || options.mode == InferMode::random) {
        if (options.rate <= 0.0 || options.rate > 1.0)
            throw ConfigError("fit: rate outside (0,1]");
    }
    if (options.kv_cache && (options.mode == InferMode::random || options.mode == InferMode::knn))
        throw ConfigError("fit: KV caching applies to the predictor context (taco/pot modes only)");
    if (options.mode == InferMode::taco && !params.has("compressor.encoder.num_w"))
        throw ConfigError("fit: taco mode requires a checkpoint with a compressor");

    FittedState state;
    FittedState::Impl& impl = *state.impl;
    impl.mode = options.mode;
    impl.precision = options.precision;
    impl.cfg = cfg;
    impl.n_classes = train.num_classes;
    impl.seed = options.seed;

    const auto start = Clock::now();
    PeakWindow window;

    // Refitting on an already-preprocessed table is a near-identity transform
    // (mean ~0, std ~1), so one code path covers raw and preprocessed input.
    auto [train_pp, stats] = preprocess(train);
    impl.stats = std::move(stats);
    impl.n_train = train_pp.n_rows;
    impl.n_features = train_pp.n_features();

    switch (options.mode) {
        case InferMode::taco:
        case InferMode::pot:
            if (options.precision == Precision::f32)
                fit_impl<float>(impl, train_pp, options, params);
            else
                fit_impl<double>(impl, train_pp, options, params);
            break;
        case InferMode::random: {
            Rng rng(Rng::derive({options.seed, 0x52414e44u}));
            impl.k = k_for_rate(options.rate, train_pp.n_rows, options.min_k);
            impl.subset = baseline_random(train_pp, impl.k, rng);
            if (options.precision == Precision::f32) {
                Fitted<float> fitted;
                fitted.model = engine::EngineModel<float>::from_params(params, cfg, false);
                impl.state = std::move(fitted);
            } else {
                Fitted<double> fitted;
                fitted.model = engine::EngineModel<double>::from_params(params, cfg, false);
                impl.state = std::move(fitted);
            }
            break;
        }
        case InferMode::knn: {
            impl.k = k_for_rate(options.rate, train_pp.n_rows, options.min_k);
            impl.train_pp = train_pp;
            if (options.precision == Precision::f32) {
                Fitted<float> fitted;
                fitted.model = engine::EngineModel<float>::from_params(params, cfg, false);
                impl.state = std::move(fitted);
            } else {
                Fitted<double> fitted;
                fitted.model = engine::EngineModel<double>::from_params(params, cfg, false);
                impl.state = std::move(fitted);
            }
            break;
        }
    }

    impl.fit_record = TimingRecord{"fit",
                                   ms_since(start),
                                   window.peak(),
                                   to_string(options.mode),
                                   impl.n_train,
                                   impl.n_features,
                                   impl.k,
                                   options.kv_cache};
    return state;
}

PredictResult FittedState::predict(const Table& test_features) {
    Impl& im = *impl;
    if (im.n_train == 0) throw DataError("predict: unfitted state");
    if (test_features.n_features() != im.n_features)
        throw DataError("predict: test schema has " + std::to_string(test_features.n_features()) +
                        " features, fit saw " + std::to_string(im.n_features));
    const Table test_pp = preprocess(test_features, im.stats);

    const auto start = Clock::now();
    PeakWindow window;
    PredictResult result = std::holds_alternative<Fitted<float>>(im.state)
                               ? predict_impl<float>(im, test_pp)
                               : predict_impl<double>(im, test_pp);

    result.timing = TimingRecord{im.first_predict_done ? "subsequent_predict" : "first_predict",
                                 ms_since(start),
                                 window.peak(),
                                 to_string(im.mode),
                                 im.n_train,
                                 im.n_features,
                                 im.k,
                                 kv_token_count() > 0};
    im.first_predict_done = true;
    return result;
}

CompressedContext chunk_and_stitch(const Table& train, double rate, const ModelParams& params,
                                   const ModelConfig& cfg, int min_k, std::uint64_t seed) {
    cfg.validate();
    const Table train_pp = train.preprocessed ? train : preprocess(train).first;
    const ChunkPlan plan = plan_chunks(train_pp.n_rows, rate, min_k);
    const auto model = engine::EngineModel<double>::from_params(params, cfg, true);
    engine::Cube<double> stitched =
        compress_chunked_engine<double>(train_pp, seed, model, nullptr, plan);

    CompressedContext ctx;
    ctx.latents = Tensor::from_data(
        {stitched.rows, stitched.cols, stitched.latent},
        std::vector<double>(stitched.data.data(),
                            stitched.data.data() + stitched.rows * stitched.cols * stitched.latent));
    ctx.k = plan.total_k;
    ctx.n_train = train_pp.n_rows;
    ctx.rate = static_cast<double>(plan.total_k) / static_cast<double>(train_pp.n_rows);
    ctx.source_fingerprint = train_pp.fingerprint();
    ctx.compressor_version = params.fingerprint_prefix("compressor.");
    return ctx;
}

Table baseline_random(const Table& train, std::int64_t k, Rng& rng) {
    if (k < 1 || k > train.n_rows)
        throw DataError("baseline_random: K=" + std::to_string(k) + " outside [1, N]");
    std::vector<std::int64_t> pool(static_cast<std::size_t>(train.n_rows));
    std::iota(pool.begin(), pool.end(), std::int64_t{0});
    std::vector<std::int64_t> picks;
    picks.reserve(static_cast<std::size_t>(k));
    for (std::int64_t i = 0; i < k; ++i) {
        const std::int64_t j = rng.uniform_int(i, train.n_rows - 1);
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
        picks.push_back(pool[static_cast<std::size_t>(i)]);
    }
    return train.select_rows(picks);
}

std::vector<std::int64_t> baseline_knn_indices(const Table& train, const Table& test_batch,
                                               std::int64_t k) {
    if (k < 1 || k > train.n_rows)
        throw DataError("baseline_knn: K=" + std::to_string(k) + " outside [1, N]");
    if (test_batch.n_rows < 1) throw DataError("baseline_knn: empty test batch");
    if (test_batch.n_features() != train.n_features())
        throw DataError("baseline_knn: feature count mismatch");

    const std::int64_t n = train.n_rows, t = test_batch.n_rows, m = train.n_features();

    // Neighbor order per test point (stable: distance, then row index).
    std::vector<std::vector<std::int64_t>> order(static_cast<std::size_t>(t));
    std::vector<double> dist(static_cast<std::size_t>(n));
    for (std::int64_t q = 0; q < t; ++q) {
        for (std::int64_t r = 0; r < n; ++r) {
            double d = 0.0;
            for (std::int64_t c = 0; c < m; ++c) {
                const double diff = train.cell(r, c) - test_batch.cell(q, c);
                d += diff * diff;
            }
            dist[static_cast<std::size_t>(r)] = d;
        }
        auto& ord = order[static_cast<std::size_t>(q)];
        ord.resize(static_cast<std::size_t>(n));
        std::iota(ord.begin(), ord.end(), std::int64_t{0});
        std::stable_sort(ord.begin(), ord.end(), [&](std::int64_t a, std::int64_t b) {
            return dist[static_cast<std::size_t>(a)] < dist[static_cast<std::size_t>(b)];
        });
    }

    // Grow k until the union is large enough.
    std::vector<char> in_union(static_cast<std::size_t>(n), 0);
    std::int64_t union_size = 0;
    std::int64_t depth = 0;
    while (union_size < k && depth < n) {
        ++depth;
        for (std::int64_t q = 0; q < t; ++q) {
            const std::int64_t r = order[static_cast<std::size_t>(q)][static_cast<std::size_t>(depth - 1)];
            if (!in_union[static_cast<std::size_t>(r)]) {
                in_union[static_cast<std::size_t>(r)] = 1;
                ++union_size;
            }
        }
    }

    // Assign each union member to the test point ranking it best (ties to the
    // lower test index), then trim the most-represented owners round-robin,
    // dropping their farthest member first.
    struct Member {
        std::int64_t row;
        std::int64_t owner;
        std::int64_t rank;
    };
    std::vector<Member> members;
    for (std::int64_t q = 0; q < t; ++q) {
        for (std::int64_t d = 0; d < depth; ++d) {
            const std::int64_t r = order[static_cast<std::size_t>(q)][static_cast<std::size_t>(d)];
            if (in_union[static_cast<std::size_t>(r)] == 1) {
                in_union[static_cast<std::size_t>(r)] = 2;  // claimed
                members.push_back({r, q, d});
            }
        }
    }
    std::vector<std::int64_t> owned(static_cast<std::size_t>(t), 0);
    for (const Member& mem : members) ++owned[static_cast<std::size_t>(mem.owner)];
    std::vector<char> dropped(members.size(), 0);
    std::int64_t remaining = static_cast<std::int64_t>(members.size());
    while (remaining > k) {
        std::int64_t worst_owner = -1;
        for (std::int64_t q = 0; q < t; ++q)
            if (worst_owner < 0 || owned[static_cast<std::size_t>(q)] >
                                       owned[static_cast<std::size_t>(worst_owner)])
                worst_owner = q;
        // drop that owner's farthest member
        std::int64_t drop = -1;
        for (std::size_t i = 0; i < members.size(); ++i) {
            if (dropped[i] || members[i].owner != worst_owner) continue;
            if (drop < 0 || members[i].rank > members[static_cast<std::size_t>(drop)].rank)
                drop = static_cast<std::int64_t>(i);
        }
        dropped[static_cast<std::size_t>(drop)] = 1;
        --owned[static_cast<std::size_t>(worst_owner)];
        --remaining;
    }
    std::vector<std::int64_t> picks;
    picks.reserve(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < members.size(); ++i)
        if (!dropped[i]) picks.push_back(members[i].row);
    std::sort(picks.begin(), picks.end());
    return picks;
}

Table baseline_knn(const Table& train, const Table& test_batch, std::int64_t k) {
    return train.select_rows(baseline_knn_indices(train, test_batch, k));
}

CostEstimate cost_model(std::int64_t n, std::int64_t m, std::int64_t k, int embed_dim, int blocks,
                        int heads, bool cached, InferMode mode, int ffn_mult,
                        int bytes_per_scalar) {
    if (n < 1 || m < 1 || k < 1 || embed_dim < 1 || blocks < 1 || heads < 1)
        throw ConfigError("cost_model: arguments must be positive");
    if (embed_dim % heads != 0) throw ConfigError("cost_model: embed_dim must divide by heads");
    const std::uint64_t r = static_cast<std::uint64_t>(mode == InferMode::pot ? n : k);
    const std::uint64_t c = static_cast<std::uint64_t>(m + 1);
    const std::uint64_t l = static_cast<std::uint64_t>(embed_dim);
    const std::uint64_t b = static_cast<std::uint64_t>(blocks);
    const std::uint64_t f = static_cast<std::uint64_t>(ffn_mult) * l;

    CostEstimate est;
    est.cache_tokens = r * c;
    est.cache_bytes = 2 * b * est.cache_tokens * l * static_cast<std::uint64_t>(bytes_per_scalar);
    if (!cached) {
        // One uncached forward over the retained context.
        est.row_attn_ctx_ctx = b * c * 4 * l * r * r;
        est.col_attn = b * r * 4 * l * c * c;
        est.proj = b * (c * 8 * r * l * l + r * 8 * c * l * l);  // row + col q/k/v/o
        est.ffn = b * r * c * 4 * l * f;
        est.encoder = 2 * l * r * static_cast<std::uint64_t>(m);
    }
    return est;
}

void save_context(const std::string& path, const CompressedContext& ctx, const ModelConfig& cfg) {
    CheckpointData data;
    data.config = cfg;
    data.arch = "context";
    data.meta["k"] = std::to_string(ctx.k);
    data.meta["n_train"] = std::to_string(ctx.n_train);
    data.meta["source_fingerprint"] = std::to_string(ctx.source_fingerprint);
    data.meta["compressor_version"] = std::to_string(ctx.compressor_version);
    data.tensors.emplace_back("latents", ctx.latents);
    save_checkpoint(path, data);
}

CompressedContext load_context(const std::string& path) {
    const CheckpointData data = load_checkpoint(path);
    const Tensor* latents = data.find("latents");
    if (!latents) throw CheckpointError("load_context: container lacks 'latents'");
    CompressedContext ctx;
    ctx.latents = Tensor::from_data(latents->shape(),
                                    {latents->values().begin(), latents->values().end()});
    ctx.k = std::stoll(data.meta.at("k"));
    ctx.n_train = std::stoll(data.meta.at("n_train"));
    ctx.rate = static_cast<double>(ctx.k) / static_cast<double>(ctx.n_train);
    ctx.source_fingerprint = std::stoull(data.meta.at("source_fingerprint"));
    ctx.compressor_version = std::stoull(data.meta.at("compressor_version"));
    return ctx;
}

}  // namespace taco
