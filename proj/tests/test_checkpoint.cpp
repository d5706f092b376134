#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "taco/checkpoint.hpp"
#include "taco/infer.hpp"
#include "taco/train.hpp"

using namespace taco;

namespace {
std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
    ModelConfig cfg{16, 1, 2, 4, 6, 8};
    ModelParams params = init_model(cfg, ArchMode::taco, 99);
    CheckpointData data = make_checkpoint(params, cfg, ArchMode::taco, 123, nullptr);
    data.meta["note"] = "round trip";

    const std::string path = temp_path("taco_ckpt_rt.taco");
    save_checkpoint(path, data);
    const CheckpointData back = load_checkpoint(path);

    CHECK(back.config == cfg);
    CHECK(back.arch == "taco");
    CHECK(back.meta.at("note") == "round trip");
    CHECK(back.meta.at("step") == "123");
    ModelParams restored = params_from_checkpoint(back);
    CHECK(restored.fingerprint() == params.fingerprint());
}

TEST_CASE("checkpoint loader rejects corruption") {
    const std::string path = temp_path("taco_ckpt_bad.taco");
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOTACKPTxxxxyyyyzzzz";
    }
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);

    // truncated payload
    ModelConfig cfg{8, 1, 2, 4, 4, 8};
    ModelParams params = init_model(cfg, ArchMode::pot, 1);
    const std::string good = temp_path("taco_ckpt_good.taco");
    save_checkpoint(good, make_checkpoint(params, cfg, ArchMode::pot, 1, nullptr));
    std::ifstream in(good, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    const std::string trunc = temp_path("taco_ckpt_trunc.taco");
    {
        std::ofstream out(trunc, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 64));
    }
    CHECK_THROWS_AS(load_checkpoint(trunc), CheckpointError);

    CHECK_THROWS_AS(load_checkpoint(temp_path("taco_missing.taco")), IoError);
}

TEST_CASE("optimizer state restores through the container") {
    ModelConfig cfg{8, 1, 2, 4, 4, 8};
    TrainConfig tc;
    tc.model = cfg;
    tc.prior = linear_scm_prior();
    tc.prior.n_rows = {16, 20};
    tc.prior.n_features = {2, 3};
    tc.micro_batch = 2;
    tc.steps = 3;
    tc.warmup_steps = 1;
    tc.peak_lr = 1e-3;
    tc.seed = 5;

    ModelParams params = init_model(cfg, ArchMode::taco, 5);
    AdamW opt;
    opt.init(params);
    for (std::int64_t s = 0; s < 2; ++s)
        train_step(episodes_for_step(tc, s), params, opt, tc, s);

    CheckpointData data = make_checkpoint(params, cfg, ArchMode::taco, 2, &opt);
    const std::string path = temp_path("taco_ckpt_opt.taco");
    save_checkpoint(path, data);

    const CheckpointData back = load_checkpoint(path);
    ModelParams restored = params_from_checkpoint(back);
    AdamW opt2;
    opt2.import_state(back, restored);
    CHECK(opt2.step_count() == opt.step_count());

    // stepping both must produce identical parameters
    train_step(episodes_for_step(tc, 2), params, opt, tc, 2);
    train_step(episodes_for_step(tc, 2), restored, opt2, tc, 2);
    CHECK(params.fingerprint() == restored.fingerprint());
}

TEST_CASE("compressed context serializes through the same container") {
    ModelConfig cfg{8, 1, 2, 4, 4, 8};
    ModelParams params = init_model(cfg, ArchMode::taco, 7);
    PriorConfig prior = linear_scm_prior();
    prior.n_rows = {20, 20};
    prior.n_features = {3, 3};
    prior.seed = 2;
    const Episode ep = sample_episode_keyed(prior, 0);
    const Table train = preprocess(ep.train).first;
    const CompressedContext ctx = compress(train, 3, params, cfg, 42);

    const std::string path = temp_path("taco_context.taco");
    save_context(path, ctx, cfg);
    const CompressedContext back = load_context(path);
    CHECK(back.k == ctx.k);
    CHECK(back.n_train == ctx.n_train);
    CHECK(back.rate == ctx.rate);  // exact: same integer division
    CHECK(back.source_fingerprint == ctx.source_fingerprint);
    CHECK(back.compressor_version == ctx.compressor_version);
    REQUIRE(back.latents.numel() == ctx.latents.numel());
    for (std::int64_t i = 0; i < ctx.latents.numel(); ++i)
        CHECK(back.latents.values()[i] == ctx.latents.values()[i]);
}
