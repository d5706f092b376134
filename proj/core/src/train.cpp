#include "taco/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <thread>

#include <nlohmann/json.hpp>

#include "taco/compressor.hpp"
#include "taco/predictor.hpp"
#include "taco/preprocess.hpp"

namespace taco {

namespace {

using json = nlohmann::json;

constexpr std::uint64_t kEpisodeKey = 0x45503031;  // episode stream
constexpr std::uint64_t kDummyKey = 0x44554d31;    // dummy-row stream
constexpr std::uint64_t kRateKey = 0x52415431;     // rate stream
constexpr std::uint64_t kAuxKey = 0x41555831;      // curriculum coin

json range_to_json(const IntRange& r) { return json::array({r.lo, r.hi}); }
json range_to_json(const RealRange& r) { return json::array({r.lo, r.hi}); }

IntRange int_range_from_json(const json& j) { return {j.at(0).get<std::int64_t>(), j.at(1).get<std::int64_t>()}; }
RealRange real_range_from_json(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

json prior_to_json(const PriorConfig& p) {
    return json{{"n_rows", range_to_json(p.n_rows)},
                {"n_features", range_to_json(p.n_features)},
                {"dag_density", p.dag_density},
                {"mechanisms", json{{"linear", p.mechanisms.linear},
                                    {"mlp", p.mechanisms.mlp},
                                    {"tree", p.mechanisms.tree}}},
                {"noise_scale", range_to_json(p.noise_scale)},
                {"num_classes", range_to_json(p.num_classes)},
                {"latent_confounders", range_to_json(p.latent_confounders)},
                {"train_fraction", p.train_fraction},
                {"categorical_feature_prob", p.categorical_feature_prob},
                {"max_cat_levels", p.max_cat_levels},
                {"mlp_hidden", p.mlp_hidden},
                {"tree_max_depth", p.tree_max_depth},
                {"resample_retries", p.resample_retries},
                {"seed", p.seed}};
}

PriorConfig prior_from_json(const json& j) {
    PriorConfig p;
    p.n_rows = int_range_from_json(j.at("n_rows"));
    p.n_features = int_range_from_json(j.at("n_features"));
    p.dag_density = j.at("dag_density").get<double>();
    p.mechanisms.linear = j.at("mechanisms").at("linear").get<double>();
    p.mechanisms.mlp = j.at("mechanisms").at("mlp").get<double>();
    p.mechanisms.tree = j.at("mechanisms").at("tree").get<double>();
    p.noise_scale = real_range_from_json(j.at("noise_scale"));
    p.num_classes = int_range_from_json(j.at("num_classes"));
    p.latent_confounders = int_range_from_json(j.at("latent_confounders"));
    p.train_fraction = j.at("train_fraction").get<double>();
    p.categorical_feature_prob = j.at("categorical_feature_prob").get<double>();
    p.max_cat_levels = j.at("max_cat_levels").get<int>();
    p.mlp_hidden = j.value("mlp_hidden", 8);
    p.tree_max_depth = j.value("tree_max_depth", 4);
    p.resample_retries = j.value("resample_retries", 16);
    p.seed = j.value("seed", std::uint64_t{0});
    return p;
}

}  // namespace

RateMode RateMode::fixed(double r) {
    RateMode m;
    m.kind = Kind::fixed;
    m.fixed_rate = r;
    return m;
}

RateMode RateMode::multi() {
    RateMode m;
    m.kind = Kind::multi;
    m.multi_rates = {0.01, 0.02, 0.04, 0.08, 0.16};
    return m;
}

void TrainConfig::validate() const {
    model.validate();
    prior.validate();
    if (aux_prior_prob > 0.0) aux_prior.validate();
    if (steps < 1 || micro_batch < 1 || accumulation < 1)
        throw ConfigError("train: steps/micro_batch/accumulation must be positive");
    if (clip_norm <= 0.0) throw ConfigError("train: clip_norm must be > 0");
    if (warmup_steps < 0 || warmup_steps >= steps)
        throw ConfigError("train: warmup_steps must lie in [0, steps)");
    if (peak_lr < 0.0) throw ConfigError("train: peak_lr must be >= 0");
    if (rate_mode.kind == RateMode::Kind::fixed &&
        (rate_mode.fixed_rate <= 0.0 || rate_mode.fixed_rate > 1.0))
        throw ConfigError("train: fixed compression rate outside (0,1]");
    if (rate_mode.kind == RateMode::Kind::multi && rate_mode.multi_rates.empty())
        throw ConfigError("train: multi rate list is empty");
    if (threads < 1) throw ConfigError("train: threads must be >= 1");
    if (min_k < 1) throw ConfigError("train: min_k must be >= 1");
    if (aux_prior_prob < 0.0 || aux_prior_prob > 1.0)
        throw ConfigError("train: aux_prior_prob outside [0,1]");
}

TrainConfig train_config_from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("train config: cannot open '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("train config: invalid JSON in '" + path + "': " + e.what());
    }
    TrainConfig c;
    try {
        c.steps = j.value("steps", c.steps);
        c.micro_batch = j.value("micro_batch", c.micro_batch);
        c.accumulation = j.value("accumulation", c.accumulation);
        c.peak_lr = j.value("peak_lr", c.peak_lr);
        c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.clip_norm = j.value("clip_norm", c.clip_norm);
        c.freeze_predictor = j.value("freeze_predictor", c.freeze_predictor);
        c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
        c.seed = j.value("seed", c.seed);
        c.min_k = j.value("min_k", c.min_k);
        c.threads = j.value("threads", c.threads);
        c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
        c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
        c.adam_eps = j.value("adam_eps", c.adam_eps);
        c.out_dir = j.value("out_dir", c.out_dir);
        c.run_name = j.value("run_name", c.run_name);
        c.aux_prior_prob = j.value("aux_prior_prob", 0.0);
        if (j.contains("arch")) {
            const auto arch = j.at("arch").get<std::string>();
            if (arch == "taco")
                c.arch = ArchMode::taco;
            else if (arch == "pot")
                c.arch = ArchMode::pot;
            else
                throw ConfigError("train config: unknown arch '" + arch + "'");
        }
        if (j.contains("rate_mode")) {
            const auto& rm = j.at("rate_mode");
            const auto kind = rm.at("kind").get<std::string>();
            if (kind == "fixed")
                c.rate_mode = RateMode::fixed(rm.at("rate").get<double>());
            else if (kind == "multi") {
                c.rate_mode = RateMode::multi();
                if (rm.contains("rates"))
                    c.rate_mode.multi_rates = rm.at("rates").get<std::vector<double>>();
            } else
                throw ConfigError("train config: unknown rate_mode kind '" + kind + "'");
        }
        if (j.contains("model")) {
            const auto& m = j.at("model");
            c.model.embed_dim = m.value("embed_dim", c.model.embed_dim);
            c.model.blocks = m.value("blocks", c.model.blocks);
            c.model.heads = m.value("heads", c.model.heads);
            c.model.ffn_mult = m.value("ffn_mult", c.model.ffn_mult);
            c.model.num_classes_max = m.value("num_classes_max", c.model.num_classes_max);
            c.model.max_categories = m.value("max_categories", c.model.max_categories);
        }
        if (j.contains("prior")) c.prior = prior_from_json(j.at("prior"));
        if (j.contains("aux_prior")) c.aux_prior = prior_from_json(j.at("aux_prior"));
    } catch (const json::exception& e) {
        throw ConfigError("train config: missing or mistyped field in '" + path + "': " + e.what());
    }
    c.validate();
    return c;
}

void train_config_to_file(const TrainConfig& c, const std::string& path) {
    json j{{"steps", c.steps},
           {"micro_batch", c.micro_batch},
           {"accumulation", c.accumulation},
           {"peak_lr", c.peak_lr},
           {"warmup_steps", c.warmup_steps},
           {"weight_decay", c.weight_decay},
           {"clip_norm", c.clip_norm},
           {"freeze_predictor", c.freeze_predictor},
           {"checkpoint_interval", c.checkpoint_interval},
           {"seed", c.seed},
           {"min_k", c.min_k},
           {"threads", c.threads},
           {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},
           {"adam_eps", c.adam_eps},
           {"out_dir", c.out_dir},
           {"run_name", c.run_name},
           {"arch", c.arch == ArchMode::taco ? "taco" : "pot"},
           {"aux_prior_prob", c.aux_prior_prob},
           {"model", json{{"embed_dim", c.model.embed_dim},
                          {"blocks", c.model.blocks},
                          {"heads", c.model.heads},
                          {"ffn_mult", c.model.ffn_mult},
                          {"num_classes_max", c.model.num_classes_max},
                          {"max_categories", c.model.max_categories}}},
           {"prior", prior_to_json(c.prior)},
           {"aux_prior", prior_to_json(c.aux_prior)}};
    if (c.rate_mode.kind == RateMode::Kind::fixed)
        j["rate_mode"] = json{{"kind", "fixed"}, {"rate", c.rate_mode.fixed_rate}};
    else
        j["rate_mode"] = json{{"kind", "multi"}, {"rates", c.rate_mode.multi_rates}};
    std::ofstream out(path);
    if (!out) throw IoError("train config: cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

ModelParams init_model(const ModelConfig& cfg, ArchMode arch, std::uint64_t seed) {
    cfg.validate();
    ModelParams params;
    Rng rng(Rng::derive({seed, 0x494e4954 /* init */}));
    if (arch == ArchMode::taco) {
        init_tab2d_params(params, "compressor.", cfg, rng);
        init_bridge_params(params, cfg, rng);
    }
    init_predictor_params(params, cfg, rng);
    return params;
}

double lr_schedule(std::int64_t step, const TrainConfig& config) {
    if (step < 0 || step > config.steps) throw ConfigError("lr_schedule: step outside [0, steps]");
    if (config.warmup_steps > 0 && step < config.warmup_steps)
        return config.peak_lr * static_cast<double>(step) / static_cast<double>(config.warmup_steps);
    const double progress = static_cast<double>(step - config.warmup_steps) /
                            static_cast<double>(config.steps - config.warmup_steps);
    return 0.5 * config.peak_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

Tensor episode_loss(const Episode& episode, std::int64_t k, std::uint64_t dummy_seed,
                    ModelParams& params, const ModelConfig& cfg, ArchMode arch) {
    auto [train_pp, stats] = preprocess(episode.train);
    const Table test_pp = preprocess(episode.test, stats);

    PredictorInput input;
    if (arch == ArchMode::taco) {
        Rng dummy_rng(dummy_seed);
        const DummyTable dummy = init_dummy(train_pp, k, dummy_rng);
        const Tensor latents = compress_latents(train_pp, dummy, params, cfg);
        input.context = bridge_latents(latents, params, cfg);
    } else {
        input.context = embed_cells(train_pp, params, "predictor.", cfg).values;
    }
    input.test_cube = embed_test_batch(test_pp, params, cfg);

    const ClassLogits logits = predict_logits(input, params, cfg, episode.train.num_classes);
    return mean_all(cross_entropy_with_logits(logits.values, episode.test.labels));
}

void AdamW::init(const ModelParams& params) {
    slots_.clear();
    slots_.reserve(params.size());
    for (const auto& [name, t] : params.items()) {
        Slot slot;
        slot.name = name;
        slot.m.assign(static_cast<std::size_t>(t.numel()), 0.0);
        slot.v.assign(static_cast<std::size_t>(t.numel()), 0.0);
        slots_.push_back(std::move(slot));
    }
    step_count_ = 0;
}

void AdamW::apply(ModelParams& params, const GradMap& grads, double lr, const TrainConfig& config,
                  const std::vector<std::string>& frozen) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(step_count_));
    for (auto& slot : slots_) {
        bool is_frozen = false;
        for (const auto& prefix : frozen) is_frozen = is_frozen || slot.name.rfind(prefix, 0) == 0;
        if (is_frozen) continue;
        Tensor& tensor = params.at(slot.name);
        const std::vector<double>* g = grads.find(slot.name);
        if (!g) throw ConfigError("AdamW: gradient map missing '" + slot.name + "'");
        auto values = tensor.mutable_values();
        const bool decay = tensor.ndim() >= 2;
        for (std::size_t i = 0; i < slot.m.size(); ++i) {
            const double gi = (*g)[i];
            slot.m[i] = config.adam_beta1 * slot.m[i] + (1.0 - config.adam_beta1) * gi;
            slot.v[i] = config.adam_beta2 * slot.v[i] + (1.0 - config.adam_beta2) * gi * gi;
            const double mhat = slot.m[i] / bc1;
            const double vhat = slot.v[i] / bc2;
            double update = mhat / (std::sqrt(vhat) + config.adam_eps);
            if (decay) update += config.weight_decay * values[i];
            values[i] -= lr * update;
        }
    }
}

void AdamW::export_state(std::vector<std::pair<std::string, Tensor>>& out) const {
    for (const auto& slot : slots_) {
        const auto n = static_cast<std::int64_t>(slot.m.size());
        out.emplace_back("opt.m." + slot.name, Tensor::from_data({n}, slot.m));
        out.emplace_back("opt.v." + slot.name, Tensor::from_data({n}, slot.v));
    }
}

void AdamW::import_state(const CheckpointData& data, const ModelParams& params) {
    init(params);
    for (auto& slot : slots_) {
        const Tensor* m = data.find("opt.m." + slot.name);
        const Tensor* v = data.find("opt.v." + slot.name);
        if (!m || !v) throw CheckpointError("AdamW: optimizer state missing for '" + slot.name + "'");
        slot.m.assign(m->values().begin(), m->values().end());
        slot.v.assign(v->values().begin(), v->values().end());
    }
    step_count_ = std::stoll(data.meta.at("optimizer_steps"));
}

std::vector<double> rates_for_step(const TrainConfig& config, std::int64_t step) {
    std::vector<double> rates(static_cast<std::size_t>(config.micro_batch));
    for (int i = 0; i < config.micro_batch; ++i) {
        if (config.rate_mode.kind == RateMode::Kind::fixed) {
            rates[static_cast<std::size_t>(i)] = config.rate_mode.fixed_rate;
        } else {
            Rng rng(Rng::derive({config.seed, kRateKey, static_cast<std::uint64_t>(step),
                                 static_cast<std::uint64_t>(i)}));
            const auto pick = rng.uniform_int(
                0, static_cast<std::int64_t>(config.rate_mode.multi_rates.size()) - 1);
            rates[static_cast<std::size_t>(i)] =
                config.rate_mode.multi_rates[static_cast<std::size_t>(pick)];
        }
    }
    return rates;
}

std::vector<Episode> episodes_for_step(const TrainConfig& config, std::int64_t step) {
    std::vector<Episode> episodes;
    episodes.reserve(static_cast<std::size_t>(config.micro_batch));
    for (int i = 0; i < config.micro_batch; ++i) {
        const std::uint64_t key = Rng::derive(
            {config.seed, kEpisodeKey, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(i)});
        const PriorConfig* prior = &config.prior;
        if (config.aux_prior_prob > 0.0) {
            Rng coin(Rng::derive({config.seed, kAuxKey, static_cast<std::uint64_t>(step),
                                  static_cast<std::uint64_t>(i)}));
            if (coin.uniform() < config.aux_prior_prob) prior = &config.aux_prior;
        }
        PriorConfig keyed = *prior;
        keyed.seed = config.seed;
        episodes.push_back(sample_episode_keyed(keyed, key));
    }
    return episodes;
}

StepStats train_step(const std::vector<Episode>& episodes, ModelParams& params, AdamW& optimizer,
                     const TrainConfig& config, std::int64_t step) {
    const auto start = std::chrono::steady_clock::now();
    const auto n = static_cast<int>(episodes.size());
    if (n == 0) throw ConfigError("train_step: no episodes");
    const std::vector<double> rates = rates_for_step(config, step);

    struct EpisodeResult {
        double loss = 0.0;
        GradMap grads;
    };
    std::vector<EpisodeResult> results(static_cast<std::size_t>(n));

    // Worker threads need their own graphs, hence their own parameter handles
    // sharing the same underlying values. Gradients are collected per episode
    // and reduced (below) in episode order, so the result does not depend on
    // the thread count.
    auto run_episode = [&](int i, ModelParams& local_params) {
        const Episode& episode = episodes[static_cast<std::size_t>(i)];
        const std::int64_t k =
            k_for_rate(rates[static_cast<std::size_t>(i)], episode.train.n_rows, config.min_k);
        const std::uint64_t dummy_seed = Rng::derive({config.seed, kDummyKey,
                                                      static_cast<std::uint64_t>(step),
                                                      static_cast<std::uint64_t>(i)});
        const Tensor loss =
            episode_loss(episode, k, dummy_seed, local_params, config.model, config.arch);
        results[static_cast<std::size_t>(i)].loss = loss.item();
        results[static_cast<std::size_t>(i)].grads = collect_gradients(loss, local_params);
    };

    if (config.threads <= 1 || n == 1) {
        for (int i = 0; i < n; ++i) run_episode(i, params);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> workers;
        const int n_workers = std::min(config.threads, n);
        for (int w = 0; w < n_workers; ++w) {
            workers.emplace_back([&]() {
                // Same tensors, thread-local grad scratch is per-episode via
                // collect_gradients' zero/copy discipline -- but grads live on
                // the shared nodes, so serialize via per-thread param clones.
                ModelParams local;
                for (const auto& [name, t] : params.items()) {
                    Tensor copy = Tensor::from_data(t.shape(),
                                                    {t.values().begin(), t.values().end()});
                    local.add(name, std::move(copy));
                }
                for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1))
                    run_episode(i, local);
            });
        }
        for (auto& w : workers) w.join();
    }

    StepStats stats;
    stats.rates = config.arch == ArchMode::taco ? rates : std::vector<double>{};

    GradMap total;
    for (const auto& [name, t] : params.items())
        total.grads.emplace_back(name, std::vector<double>(static_cast<std::size_t>(t.numel()), 0.0));
    double loss_sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto& r = results[static_cast<std::size_t>(i)];
        if (!std::isfinite(r.loss))
            throw Error("train_step: non-finite loss at step " + std::to_string(step) +
                        ", episode task id " +
                        std::to_string(episodes[static_cast<std::size_t>(i)].task_id));
        loss_sum += r.loss;
        for (std::size_t p = 0; p < total.grads.size(); ++p) {
            const auto& src = r.grads.grads[p].second;
            auto& dst = total.grads[p].second;
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
    }
    stats.loss = loss_sum / static_cast<double>(n);

    const double inv_n = 1.0 / static_cast<double>(n);
    double sq_norm = 0.0;
    for (auto& [name, g] : total.grads)
        for (double& v : g) {
            v *= inv_n;
            sq_norm += v * v;
        }
    stats.grad_norm = std::sqrt(sq_norm);
    if (stats.grad_norm > config.clip_norm) {
        const double scale = config.clip_norm / stats.grad_norm;
        for (auto& [name, g] : total.grads)
            for (double& v : g) v *= scale;
        stats.post_clip_norm = config.clip_norm;
    } else {
        stats.post_clip_norm = stats.grad_norm;
    }

    stats.lr = lr_schedule(step, config);
    std::vector<std::string> frozen;
    if (config.freeze_predictor) frozen.push_back("predictor.");
    optimizer.apply(params, total, stats.lr, config, frozen);

    const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start);
    stats.episodes_per_s = static_cast<double>(n) / std::max(1e-9, elapsed.count());
    return stats;
}

namespace {

void write_metrics_line(std::ofstream& out, std::int64_t step, const StepStats& stats) {
    json line{{"step", step},
              {"loss", stats.loss},
              {"grad_norm", stats.grad_norm},
              {"post_clip_norm", stats.post_clip_norm},
              {"lr", stats.lr},
              {"episodes_per_s", stats.episodes_per_s},
              {"rates", stats.rates}};
    out << line.dump() << '\n';
    out.flush();
}

}  // namespace

CheckpointData make_checkpoint(const ModelParams& params, const ModelConfig& cfg, ArchMode arch,
                               std::int64_t step, const AdamW* optimizer) {
    CheckpointData data;
    data.config = cfg;
    data.arch = arch == ArchMode::taco ? "taco" : "pot";
    data.meta["step"] = std::to_string(step);
    data.meta["params_fingerprint"] = std::to_string(params.fingerprint());
    for (const auto& [name, t] : params.items()) data.tensors.emplace_back(name, t);
    if (optimizer) {
        optimizer->export_state(data.tensors);
        data.meta["optimizer_steps"] = std::to_string(optimizer->step_count());
    }
    return data;
}

ModelParams params_from_checkpoint(const CheckpointData& data) {
    ModelParams params;
    for (const auto& [name, t] : data.tensors) {
        if (name.rfind("opt.", 0) == 0) continue;
        Tensor copy = Tensor::from_data(t.shape(), {t.values().begin(), t.values().end()});
        params.add(name, std::move(copy));
    }
    return params;
}

TrainResult run_training(const TrainConfig& config, const std::optional<std::string>& resume_from,
                         const std::function<void(std::int64_t, const StepStats&)>& on_step) {
    config.validate();
    namespace fs = std::filesystem;
    if (config.out_dir.empty()) throw ConfigError("run_training: out_dir is required");
    fs::create_directories(config.out_dir);

    ModelParams params;
    AdamW optimizer;
    std::int64_t start_step = 0;
    if (resume_from) {
        const CheckpointData data = load_checkpoint(*resume_from);
        params = params_from_checkpoint(data);
        optimizer.import_state(data, params);
        start_step = std::stoll(data.meta.at("step"));
    } else {
        params = init_model(config.model, config.arch, config.seed);
        optimizer.init(params);
    }

    const fs::path metrics_path = fs::path(config.out_dir) / (config.run_name + ".metrics.ndjson");
    std::ofstream metrics(metrics_path, std::ios::app);
    if (!metrics) throw IoError("run_training: cannot open metrics log " + metrics_path.string());

    TrainResult result;
    for (std::int64_t step = start_step; step < config.steps; ++step) {
        const std::vector<Episode> episodes = episodes_for_step(config, step);
        const StepStats stats = train_step(episodes, params, optimizer, config, step);
        write_metrics_line(metrics, step, stats);
        if (on_step) on_step(step, stats);
        result.last_loss = stats.loss;

        const bool last = step + 1 == config.steps;
        if (last || (config.checkpoint_interval > 0 && (step + 1) % config.checkpoint_interval == 0)) {
            const CheckpointData data =
                make_checkpoint(params, config.model, config.arch, step + 1, &optimizer);
            const fs::path path =
                fs::path(config.out_dir) / (config.run_name + ".step" + std::to_string(step + 1) +
                                            ".taco");
            save_checkpoint(path.string(), data);
            if (last) {
                // Inference checkpoint without optimizer state.
                const CheckpointData final_data =
                    make_checkpoint(params, config.model, config.arch, step + 1, nullptr);
                const fs::path final_path =
                    fs::path(config.out_dir) / (config.run_name + ".final.taco");
                save_checkpoint(final_path.string(), final_data);
                result.final_checkpoint = final_path.string();
            }
        }
    }
    result.steps_done = config.steps - start_step;
    return result;
}

}  // namespace taco
