#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "taco/train.hpp"

using namespace taco;

namespace {

TrainConfig tiny_config() {
    TrainConfig tc;
    tc.model = ModelConfig{16, 1, 2, 4, 6, 8};
    tc.prior = linear_scm_prior();
    tc.prior.n_rows = {20, 28};
    tc.prior.n_features = {2, 4};
    tc.micro_batch = 3;
    tc.steps = 50;
    tc.warmup_steps = 5;
    tc.peak_lr = 1e-3;
    tc.seed = 13;
    return tc;
}

}  // namespace

TEST_CASE("lr schedule endpoints and warmup peak") {
    TrainConfig tc = tiny_config();
    tc.steps = 1000;
    tc.warmup_steps = 100;
    tc.peak_lr = 1e-4;
    CHECK(lr_schedule(0, tc) == 0.0);
    CHECK(lr_schedule(100, tc) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(lr_schedule(1000, tc) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(lr_schedule(50, tc) == doctest::Approx(5e-5));
    // cosine midpoint
    CHECK(lr_schedule(550, tc) == doctest::Approx(5e-5));
    CHECK_THROWS_AS(lr_schedule(1001, tc), ConfigError);
}

TEST_CASE("learning rate zero leaves parameters bit-identical") {
    TrainConfig tc = tiny_config();
    tc.peak_lr = 0.0;
    ModelParams params = init_model(tc.model, tc.arch, tc.seed);
    const std::uint64_t before = params.fingerprint();
    AdamW opt;
    opt.init(params);
    train_step(episodes_for_step(tc, 0), params, opt, tc, 0);
    CHECK(params.fingerprint() == before);
}

TEST_CASE("freeze_predictor leaves theta untouched while phi moves") {
    TrainConfig tc = tiny_config();
    tc.freeze_predictor = true;
    ModelParams params = init_model(tc.model, tc.arch, tc.seed);
    const std::uint64_t theta_before = params.fingerprint_prefix("predictor.");
    const std::uint64_t phi_before = params.fingerprint_prefix("compressor.");
    AdamW opt;
    opt.init(params);
    for (std::int64_t s = 0; s < 3; ++s)
        train_step(episodes_for_step(tc, s), params, opt, tc, s);
    CHECK(params.fingerprint_prefix("predictor.") == theta_before);
    CHECK(params.fingerprint_prefix("compressor.") != phi_before);
    // the bridge adapts alongside the compressor
    CHECK(params.fingerprint_prefix("bridge.") != 0);
}

TEST_CASE("gradient clipping bounds the applied norm") {
    TrainConfig tc = tiny_config();
    tc.clip_norm = 0.05;  // low enough that clipping engages
    ModelParams params = init_model(tc.model, tc.arch, tc.seed);
    AdamW opt;
    opt.init(params);
    for (std::int64_t s = 0; s < 3; ++s) {
        const StepStats stats = train_step(episodes_for_step(tc, s), params, opt, tc, s);
        CHECK(stats.post_clip_norm <= tc.clip_norm + 1e-9);
        if (stats.grad_norm > tc.clip_norm)
            CHECK(stats.post_clip_norm == doctest::Approx(tc.clip_norm));
    }
}

TEST_CASE("multi-rate sampling covers every rate with near-uniform frequency") {
    TrainConfig tc = tiny_config();
    tc.rate_mode = RateMode::multi();
    tc.micro_batch = 4;
    std::map<double, int> counts;
    int total = 0;
    for (std::int64_t s = 0; s < 1000; ++s)
        for (double r : rates_for_step(tc, s)) {
            ++counts[r];
            ++total;
        }
    CHECK(counts.size() == 5);
    for (const auto& [rate, count] : counts) {
        const double freq = static_cast<double>(count) / total;
        CHECK(freq > 0.15);
        CHECK(freq < 0.25);
    }
}

TEST_CASE("single-episode overfit drives the loss down by 10x") {
    TrainConfig tc = tiny_config();
    tc.micro_batch = 1;
    tc.steps = 500;
    tc.warmup_steps = 20;
    tc.peak_lr = 2e-3;
    tc.rate_mode = RateMode::fixed(0.2);
    ModelParams params = init_model(tc.model, tc.arch, tc.seed);
    AdamW opt;
    opt.init(params);
    const std::vector<Episode> episode = episodes_for_step(tc, 0);  // reused every step
    double initial = 0, latest = 0;
    for (std::int64_t s = 0; s < tc.steps; ++s) {
        const StepStats stats = train_step(episode, params, opt, tc, s);
        if (s == 0) initial = stats.loss;
        latest = stats.loss;
    }
    CHECK(latest < 0.1 * initial);
}

TEST_CASE("gradient accumulation is independent of the worker count") {
    TrainConfig tc = tiny_config();
    tc.micro_batch = 4;
    ModelParams p1 = init_model(tc.model, tc.arch, tc.seed);
    ModelParams p2 = init_model(tc.model, tc.arch, tc.seed);
    AdamW o1, o2;
    o1.init(p1);
    o2.init(p2);
    TrainConfig serial = tc;
    serial.threads = 1;
    TrainConfig threaded = tc;
    threaded.threads = 3;
    for (std::int64_t s = 0; s < 2; ++s) {
        const StepStats a = train_step(episodes_for_step(tc, s), p1, o1, serial, s);
        const StepStats b = train_step(episodes_for_step(tc, s), p2, o2, threaded, s);
        CHECK(a.loss == b.loss);
    }
    CHECK(p1.fingerprint() == p2.fingerprint());
}

TEST_CASE("non-finite loss aborts with the episode trace id") {
    TrainConfig tc = tiny_config();
    ModelParams params = init_model(tc.model, tc.arch, tc.seed);
    for (auto& v : params.at("bridge.w1").mutable_values()) v = 1e200;
    for (auto& v : params.at("bridge.w2").mutable_values()) v = 1e200;
    AdamW opt;
    opt.init(params);
    try {
        train_step(episodes_for_step(tc, 0), params, opt, tc, 0);
        FAIL("expected abort");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("task id") != std::string::npos);
    }
}

TEST_CASE("run_training resumes bit-identically and logs metrics") {
    namespace fs = std::filesystem;
    TrainConfig tc = tiny_config();
    tc.steps = 6;
    tc.checkpoint_interval = 3;
    tc.out_dir = (fs::temp_directory_path() / "taco_train_a").string();
    tc.run_name = "t";
    fs::remove_all(tc.out_dir);
    run_training(tc);
    const ModelParams full =
        params_from_checkpoint(load_checkpoint(tc.out_dir + "/t.step6.taco"));

    TrainConfig resumed = tc;
    resumed.out_dir = (fs::temp_directory_path() / "taco_train_b").string();
    fs::remove_all(resumed.out_dir);
    fs::create_directories(resumed.out_dir);
    run_training(resumed, tc.out_dir + "/t.step3.taco");
    const ModelParams resumed_params =
        params_from_checkpoint(load_checkpoint(resumed.out_dir + "/t.step6.taco"));
    CHECK(full.fingerprint() == resumed_params.fingerprint());

    CHECK(fs::exists(tc.out_dir + "/t.metrics.ndjson"));
    CHECK(fs::exists(tc.out_dir + "/t.final.taco"));
}

TEST_CASE("train config json round trip and validation") {
    namespace fs = std::filesystem;
    TrainConfig tc = tiny_config();
    tc.rate_mode = RateMode::multi();
    tc.out_dir = "somewhere";
    const std::string path = (fs::temp_directory_path() / "taco_cfg.json").string();
    train_config_to_file(tc, path);
    const TrainConfig back = train_config_from_file(path);
    CHECK(back.steps == tc.steps);
    CHECK(back.peak_lr == tc.peak_lr);
    CHECK(back.rate_mode.kind == RateMode::Kind::multi);
    CHECK(back.rate_mode.multi_rates == tc.rate_mode.multi_rates);
    CHECK(back.model == tc.model);
    CHECK(back.prior.n_rows.lo == tc.prior.n_rows.lo);

    TrainConfig bad = tc;
    bad.warmup_steps = bad.steps;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = tc;
    bad.clip_norm = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    CHECK_THROWS_AS(train_config_from_file("/nonexistent/x.json"), ConfigError);
}
