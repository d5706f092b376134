#include <doctest.h>

#include <cmath>

#include "taco/preprocess.hpp"
#include "taco/prior.hpp"
#include "taco/tab2d.hpp"
#include "taco/train.hpp"

using namespace taco;

namespace {

const ModelConfig kCfg{8, 2, 2, 4, 6, 8};

Table toy_table(std::int64_t rows, std::int64_t feats, std::uint64_t seed) {
    Table t;
    Rng rng(seed);
    for (std::int64_t c = 0; c < feats; ++c)
        t.schema.push_back({"f" + std::to_string(c), ColKind::numeric, {}});
    t.n_rows = rows;
    t.cells.resize(static_cast<std::size_t>(rows * feats));
    for (auto& v : t.cells) v = rng.normal();
    t.labels.resize(static_cast<std::size_t>(rows));
    for (auto& y : t.labels) y = static_cast<int>(rng.uniform_int(0, 1));
    t.num_classes = 2;
    t.preprocessed = true;
    return t;
}

ModelParams toy_params(std::uint64_t seed = 21) {
    ModelParams params;
    Rng rng(seed);
    init_tab2d_params(params, "m.", kCfg, rng);
    return params;
}

double cube_max_diff(const LatentCube& a, const LatentCube& b) {
    double worst = 0;
    for (std::size_t i = 0; i < a.values.values().size(); ++i)
        worst = std::max(worst, std::abs(a.values.values()[i] - b.values.values()[i]));
    return worst;
}

}  // namespace

TEST_CASE("embed_cells shape contract") {
    Table t = toy_table(4, 3, 1);
    ModelParams params = toy_params();
    LatentCube cube = embed_cells(t, params, "m.", kCfg);
    CHECK(cube.rows() == 4);
    CHECK(cube.cols() == 4);  // 3 features + target
    CHECK(cube.latent_dim() == 8);
}

TEST_CASE("identical rows embed identically; target slice carries the label") {
    Table t = toy_table(2, 3, 2);
    for (std::int64_t c = 0; c < 3; ++c) t.cell(1, c) = t.cell(0, c);
    t.labels = {1, 1};
    ModelParams params = toy_params();
    LatentCube cube = embed_cells(t, params, "m.", kCfg);
    for (std::int64_t c = 0; c < 4; ++c)
        for (std::int64_t l = 0; l < 8; ++l)
            CHECK(cube.values.at({0, c, l}) == cube.values.at({1, c, l}));

    // MISSING_TARGET vs a concrete label: only the target column differs
    Table masked = t;
    masked.labels = {kMissingTarget, kMissingTarget};
    LatentCube cube2 = embed_cells(masked, params, "m.", kCfg);
    for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t l = 0; l < 8; ++l)
            CHECK(cube.values.at({0, c, l}) == cube2.values.at({0, c, l}));
    double target_diff = 0;
    for (std::int64_t l = 0; l < 8; ++l)
        target_diff = std::max(target_diff,
                               std::abs(cube.values.at({0, 3, l}) - cube2.values.at({0, 3, l})));
    CHECK(target_diff > 1e-6);
}

TEST_CASE("embed_cells rejects non-finite features") {
    Table t = toy_table(2, 2, 3);
    t.cell(0, 1) = std::numeric_limits<double>::infinity();
    ModelParams params = toy_params();
    CHECK_THROWS_AS(embed_cells(t, params, "m.", kCfg), DataError);
}

TEST_CASE("attention mask: all-false row rejected, diagonal forced") {
    CHECK_THROWS_AS(AttentionMask(2, {0, 0, 1, 1}), ShapeError);
    AttentionMask mask(2, {0, 1, 1, 0});
    CHECK(mask.allowed(0, 0));  // diagonal forced on
    CHECK(mask.allowed(1, 1));
}

TEST_CASE("row_attention on a single row equals the hand-built value path") {
    Table t = toy_table(1, 2, 4);
    ModelParams params = toy_params();
    LatentCube cube = embed_cells(t, params, "m.", kCfg);
    LatentCube out = row_attention(cube, AttentionMask::full(1), params, "m.block0.", kCfg);

    // With one token the attention weight is 1: out = x + (LN(x) Wv) Wo.
    const Tensor normed = layer_norm(reshape(cube.values, {3, 8}), params.at("m.block0.row.norm_g"),
                                     params.at("m.block0.row.norm_b"));
    const Tensor expect =
        add(reshape(cube.values, {3, 8}),
            matmul(matmul(normed, params.at("m.block0.row.wv")), params.at("m.block0.row.wo")));
    for (std::int64_t i = 0; i < expect.numel(); ++i)
        CHECK(out.values.values()[i] == doctest::Approx(expect.values()[i]).epsilon(1e-12));
}

TEST_CASE("full mask mixes rows; blocking an edge isolates it") {
    Table t = toy_table(3, 2, 5);
    ModelParams params = toy_params();
    LatentCube cube = embed_cells(t, params, "m.", kCfg);

    Table moved = t;
    moved.cell(2, 0) += 1.0;
    LatentCube cube2 = embed_cells(moved, params, "m.", kCfg);

    // full mask: row 0 output depends on row 2
    LatentCube full_a = row_attention(cube, AttentionMask::full(3), params, "m.block0.", kCfg);
    LatentCube full_b = row_attention(cube2, AttentionMask::full(3), params, "m.block0.", kCfg);
    double diff = 0;
    for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t l = 0; l < 8; ++l)
            diff = std::max(diff, std::abs(full_a.values.at({0, c, l}) - full_b.values.at({0, c, l})));
    CHECK(diff > 1e-9);

    // forbid row0 -> row2: row 0 becomes exactly independent of row 2
    std::vector<std::uint8_t> allow(9, 1);
    allow[0 * 3 + 2] = 0;
    AttentionMask mask(3, std::move(allow));
    LatentCube m_a = row_attention(cube, mask, params, "m.block0.", kCfg);
    LatentCube m_b = row_attention(cube2, mask, params, "m.block0.", kCfg);
    double diff0 = 0;
    for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t l = 0; l < 8; ++l)
            diff0 = std::max(diff0, std::abs(m_a.values.at({0, c, l}) - m_b.values.at({0, c, l})));
    CHECK(diff0 == 0.0);
}

TEST_CASE("col_attention: shape, feature permutation, per-row locality") {
    Table t = toy_table(3, 1, 6);  // M+1 == 2 columns
    ModelParams params = toy_params();
    LatentCube cube = embed_cells(t, params, "m.", kCfg);
    LatentCube out = col_attention(cube, params, "m.block0.", kCfg);
    CHECK(out.rows() == 3);
    CHECK(out.cols() == 2);
    // both column slices updated
    double d0 = 0, d1 = 0;
    for (std::int64_t r = 0; r < 3; ++r)
        for (std::int64_t l = 0; l < 8; ++l) {
            d0 = std::max(d0, std::abs(out.values.at({r, 0, l}) - cube.values.at({r, 0, l})));
            d1 = std::max(d1, std::abs(out.values.at({r, 1, l}) - cube.values.at({r, 1, l})));
        }
    CHECK(d0 > 0);
    CHECK(d1 > 0);

    // rows processed independently: perturbing row 1 leaves row 0 unchanged
    Table moved = t;
    moved.cell(1, 0) -= 2.0;
    LatentCube cube2 = embed_cells(moved, params, "m.", kCfg);
    LatentCube out2 = col_attention(cube2, params, "m.block0.", kCfg);
    for (std::int64_t c = 0; c < 2; ++c)
        for (std::int64_t l = 0; l < 8; ++l)
            CHECK(out.values.at({0, c, l}) == out2.values.at({0, c, l}));
}

TEST_CASE("feature-column permutation equivariance of one col_attention") {
    Table t = toy_table(4, 3, 7);
    ModelParams params = toy_params();
    LatentCube out = col_attention(embed_cells(t, params, "m.", kCfg), params, "m.block0.", kCfg);

    Table perm = t;  // swap features 0 and 2
    perm.schema[0] = t.schema[2];
    perm.schema[2] = t.schema[0];
    for (std::int64_t r = 0; r < t.n_rows; ++r) {
        perm.cell(r, 0) = t.cell(r, 2);
        perm.cell(r, 2) = t.cell(r, 0);
    }
    LatentCube outp = col_attention(embed_cells(perm, params, "m.", kCfg), params, "m.block0.", kCfg);
    const std::vector<std::int64_t> map{2, 1, 0, 3};
    for (std::int64_t r = 0; r < 4; ++r)
        for (std::int64_t c = 0; c < 4; ++c)
            for (std::int64_t l = 0; l < 8; ++l)
                CHECK(std::abs(outp.values.at({r, c, l}) -
                               out.values.at({r, map[static_cast<std::size_t>(c)], l})) < 1e-6);
}

TEST_CASE("transformer stack: zero blocks is identity, shapes preserved, finite outputs") {
    Table t = toy_table(5, 3, 8);
    ModelParams params = toy_params();
    LatentCube cube = embed_cells(t, params, "m.", kCfg);
    AttentionMask mask = AttentionMask::full(5);

    LatentCube same = run_stack(cube, mask, params, "m.", 0, kCfg);
    CHECK(cube_max_diff(same, cube) == 0.0);

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Table wild = toy_table(4, 3, 100 + seed);
        Rng rng(seed);
        for (auto& v : wild.cells) v = rng.uniform(-5.0, 5.0);
        LatentCube out = run_stack(embed_cells(wild, params, "m.", kCfg), AttentionMask::full(4),
                                   params, "m.", kCfg.blocks, kCfg);
        CHECK(out.rows() == 4);
        CHECK(out.cols() == 4);
        CHECK(out.latent_dim() == 8);
        for (double v : out.values.values()) CHECK(std::isfinite(v));
    }
}

TEST_CASE("full-stack feature permutation equivariance") {
    Table t = toy_table(6, 4, 9);
    ModelParams params = toy_params();
    AttentionMask mask = AttentionMask::full(6);
    LatentCube out = run_stack(embed_cells(t, params, "m.", kCfg), mask, params, "m.", kCfg.blocks, kCfg);

    // reverse the feature columns, keep the target last
    Table perm = t;
    for (std::int64_t c = 0; c < 4; ++c) {
        perm.schema[static_cast<std::size_t>(c)] = t.schema[static_cast<std::size_t>(3 - c)];
        for (std::int64_t r = 0; r < t.n_rows; ++r) perm.cell(r, c) = t.cell(r, 3 - c);
    }
    LatentCube outp =
        run_stack(embed_cells(perm, params, "m.", kCfg), mask, params, "m.", kCfg.blocks, kCfg);
    double worst = 0;
    for (std::int64_t r = 0; r < 6; ++r) {
        for (std::int64_t c = 0; c < 5; ++c) {
            const std::int64_t src = c < 4 ? 3 - c : 4;
            for (std::int64_t l = 0; l < 8; ++l)
                worst = std::max(worst, std::abs(outp.values.at({r, c, l}) -
                                                 out.values.at({r, src, l})));
        }
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("row-mask soundness through the full stack") {
    // Predictor-style mask: test rows (2,3) see the context (0,1) and
    // themselves. Perturbing test row 3 must leave test row 2 untouched.
    Table t = toy_table(4, 3, 10);
    ModelParams params = toy_params();
    AttentionMask mask = AttentionMask::predictor(2, 2);
    LatentCube out = run_stack(embed_cells(t, params, "m.", kCfg), mask, params, "m.", kCfg.blocks, kCfg);

    Table moved = t;
    moved.cell(3, 1) += 0.7;
    LatentCube out2 =
        run_stack(embed_cells(moved, params, "m.", kCfg), mask, params, "m.", kCfg.blocks, kCfg);
    double jacobian_probe = 0;
    for (std::int64_t c = 0; c < 4; ++c)
        for (std::int64_t l = 0; l < 8; ++l)
            jacobian_probe = std::max(jacobian_probe, std::abs(out.values.at({2, c, l}) -
                                                               out2.values.at({2, c, l})));
    CHECK(jacobian_probe < 1e-9);
}

TEST_CASE("categorical features bucket overflow ids to the shared slot") {
    Table t;
    t.schema = {{"c", ColKind::categorical, {}}};
    for (int i = 0; i < 12; ++i) t.schema[0].categories.push_back(std::to_string(i));
    t.n_rows = 2;
    t.cells = {9, 11};  // max_categories is 8 in kCfg: both overflow
    t.labels = {0, 1};
    t.num_classes = 2;
    t.preprocessed = true;
    ModelParams params = toy_params();
    LatentCube cube = embed_cells(t, params, "m.", kCfg);
    for (std::int64_t l = 0; l < 8; ++l)
        CHECK(cube.values.at({0, 0, l}) == cube.values.at({1, 0, l}));
}
