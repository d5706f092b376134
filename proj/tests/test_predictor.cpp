#include <doctest.h>

#include <cmath>

#include "taco/compressor.hpp"
#include "taco/predictor.hpp"
#include "taco/preprocess.hpp"
#include "taco/prior.hpp"
#include "taco/train.hpp"

using namespace taco;

namespace {

const ModelConfig kCfg{8, 2, 2, 4, 6, 8};

struct Setup {
    ModelParams params;
    Table train, test;
    Tensor context;  // bridged compressed context
};

Setup make_setup(std::uint64_t seed) {
    Setup s{init_model(kCfg, ArchMode::taco, seed), {}, {}, {}};
    PriorConfig prior = linear_scm_prior();
    prior.n_rows = {24, 24};
    prior.n_features = {3, 3};
    prior.seed = seed;
    Episode ep = sample_episode_keyed(prior, 2);
    auto [train_pp, stats] = preprocess(ep.train);
    s.train = train_pp;
    s.test = preprocess(ep.test, stats);
    autograd::NoGradGuard ng;
    Rng rng(5);
    DummyTable dummy = init_dummy(s.train, 4, rng);
    s.context = bridge_latents(compress_latents(s.train, dummy, s.params, kCfg), s.params, kCfg);
    return s;
}

}  // namespace

TEST_CASE("logit shapes and class-count validation") {
    Setup s = make_setup(31);
    autograd::NoGradGuard ng;
    Tensor test_cube = embed_test_batch(s.test, s.params, kCfg);
    ClassLogits lg = predict_logits({s.context, test_cube}, s.params, kCfg, 2);
    CHECK(lg.values.shape() == Shape{s.test.n_rows, 2});

    ClassLogits lg3 = predict_logits({s.context, test_cube}, s.params, kCfg, 3);
    CHECK(lg3.values.dim(1) == 3);

    CHECK_THROWS_AS(predict_logits({s.context, test_cube}, s.params, kCfg, kCfg.num_classes_max + 1),
                    ConfigError);
    CHECK_THROWS_AS(predict_logits({s.context, test_cube}, s.params, kCfg, 1), ConfigError);
}

TEST_CASE("context-row permutation invariance of logits") {
    Setup s = make_setup(32);
    autograd::NoGradGuard ng;
    Tensor test_cube = embed_test_batch(s.test, s.params, kCfg);
    ClassLogits base = predict_logits({s.context, test_cube}, s.params, kCfg, 2);

    std::vector<Tensor> rows;
    for (std::int64_t r = s.context.dim(0) - 1; r >= 0; --r)
        rows.push_back(slice(s.context, 0, r, 1));
    ClassLogits permuted = predict_logits({concat(rows, 0), test_cube}, s.params, kCfg, 2);
    double worst = 0;
    for (std::int64_t i = 0; i < base.values.numel(); ++i)
        worst = std::max(worst, std::abs(base.values.values()[i] - permuted.values.values()[i]));
    CHECK(worst < 1e-6);
}

TEST_CASE("test-row permutation permutes logits; duplicates agree") {
    Setup s = make_setup(33);
    autograd::NoGradGuard ng;
    Tensor test_cube = embed_test_batch(s.test, s.params, kCfg);
    ClassLogits base = predict_logits({s.context, test_cube}, s.params, kCfg, 2);

    // reverse test rows
    std::vector<Tensor> rows;
    for (std::int64_t r = test_cube.dim(0) - 1; r >= 0; --r)
        rows.push_back(slice(test_cube, 0, r, 1));
    ClassLogits rev = predict_logits({s.context, concat(rows, 0)}, s.params, kCfg, 2);
    const std::int64_t t = test_cube.dim(0);
    for (std::int64_t r = 0; r < t; ++r)
        for (std::int64_t c = 0; c < 2; ++c)
            CHECK(rev.values.at({r, c}) ==
                  doctest::Approx(base.values.at({t - 1 - r, c})).epsilon(1e-9));

    // duplicate one test row: both copies receive identical logits
    Tensor dup = concat({slice(test_cube, 0, 0, 1), slice(test_cube, 0, 0, 1)}, 0);
    ClassLogits two = predict_logits({s.context, dup}, s.params, kCfg, 2);
    for (std::int64_t c = 0; c < 2; ++c)
        CHECK(two.values.at({0, c}) == two.values.at({1, c}));
}

TEST_CASE("test rows are mutually independent") {
    Setup s = make_setup(34);
    autograd::NoGradGuard ng;
    Tensor test_cube = embed_test_batch(s.test, s.params, kCfg);
    ClassLogits base = predict_logits({s.context, test_cube}, s.params, kCfg, 2);

    Table moved = s.test;
    moved.cell(1, 0) += 2.0;
    Tensor moved_cube = embed_test_batch(moved, s.params, kCfg);
    ClassLogits shifted = predict_logits({s.context, moved_cube}, s.params, kCfg, 2);

    double row0 = 0, row1 = 0;
    for (std::int64_t c = 0; c < 2; ++c) {
        row0 = std::max(row0, std::abs(base.values.at({0, c}) - shifted.values.at({0, c})));
        row1 = std::max(row1, std::abs(base.values.at({1, c}) - shifted.values.at({1, c})));
    }
    CHECK(row0 < 1e-9);  // untouched row: numerically zero Jacobian block
    CHECK(row1 > 1e-6);  // perturbed row actually moved
}

TEST_CASE("label sensitivity: real context labels reach the logits") {
    Setup s = make_setup(35);
    autograd::NoGradGuard ng;
    ClassLogits base = predict_from_table(s.train, s.test, s.params, kCfg);
    Table flipped = s.train;
    flipped.labels[0] = 1 - flipped.labels[0];
    ClassLogits changed = predict_from_table(flipped, s.test, s.params, kCfg);
    double diff = 0;
    for (std::int64_t i = 0; i < base.values.numel(); ++i)
        diff = std::max(diff, std::abs(base.values.values()[i] - changed.values.values()[i]));
    CHECK(diff > 1e-8);
}

TEST_CASE("predict_from_table is exactly the embed + predict_logits composition") {
    Setup s = make_setup(36);
    autograd::NoGradGuard ng;
    ClassLogits composed = predict_logits(
        {embed_cells(s.train, s.params, "predictor.", kCfg).values,
         embed_test_batch(s.test, s.params, kCfg)},
        s.params, kCfg, s.train.num_classes);
    ClassLogits direct = predict_from_table(s.train, s.test, s.params, kCfg);
    for (std::int64_t i = 0; i < direct.values.numel(); ++i)
        CHECK(direct.values.values()[i] == composed.values.values()[i]);
}

TEST_CASE("a constant-label prior teaches label copying from a 1-row context") {
    // Minimal training on episodes whose labels are all the same class; the
    // Bayes answer for any test row is that class, even from one context row.
    ModelConfig cfg{16, 1, 2, 4, 6, 8};
    TrainConfig tc;
    tc.model = cfg;
    tc.prior = linear_scm_prior();
    tc.prior.n_rows = {16, 24};
    tc.prior.n_features = {2, 3};
    tc.micro_batch = 6;
    tc.steps = 120;
    tc.warmup_steps = 20;
    tc.peak_lr = 2e-3;
    tc.seed = 9;
    tc.arch = ArchMode::pot;

    ModelParams params = init_model(cfg, ArchMode::pot, 9);
    AdamW opt;
    opt.init(params);
    for (std::int64_t step = 0; step < tc.steps; ++step) {
        std::vector<Episode> episodes = episodes_for_step(tc, step);
        for (std::size_t i = 0; i < episodes.size(); ++i) {
            const int cls = static_cast<int>((step + static_cast<std::int64_t>(i)) % 2);
            for (auto& y : episodes[i].train.labels) y = cls;
            for (auto& y : episodes[i].test.labels) y = cls;
            episodes[i].train.num_classes = 2;
            episodes[i].test.num_classes = 2;
        }
        train_step(episodes, params, opt, tc, step);
    }

    autograd::NoGradGuard ng;
    int correct = 0, total = 0;
    for (std::uint64_t e = 0; e < 10; ++e) {
        PriorConfig prior = tc.prior;
        prior.seed = 1000 + e;
        Episode ep = sample_episode_keyed(prior, e);
        auto [train_pp, stats] = preprocess(ep.train);
        const Table test_pp = preprocess(ep.test, stats);
        const int cls = static_cast<int>(e % 2);
        Table one_row = train_pp.select_rows({0});
        one_row.labels = {cls};
        one_row.num_classes = 2;
        ClassLogits lg = predict_from_table(one_row, test_pp, params, cfg);
        for (std::int64_t r = 0; r < lg.values.dim(0); ++r) {
            const int arg = lg.values.at({r, 1}) > lg.values.at({r, 0}) ? 1 : 0;
            correct += arg == cls ? 1 : 0;
            ++total;
        }
    }
    // Bayes answer: copy the context label.
    CHECK(correct == total);
}
