#include "taco/predictor.hpp"

#include <cmath>

namespace taco {

void init_predictor_params(ModelParams& params, const ModelConfig& cfg, Rng& rng) {
    init_tab2d_params(params, "predictor.", cfg, rng);
    const std::int64_t l = cfg.embed_dim;
    params.add("predictor.head.norm_g", Tensor::full({l}, 1.0));
    params.add("predictor.head.norm_b", Tensor::zeros({l}));
    params.add("predictor.head.w",
               Tensor::randn({l, cfg.num_classes_max}, rng,
                             std::sqrt(2.0 / static_cast<double>(l + cfg.num_classes_max))));
    params.add("predictor.head.b", Tensor::zeros({cfg.num_classes_max}));
}

ClassLogits predict_logits(const PredictorInput& input, const ModelParams& params,
                           const ModelConfig& cfg, int num_classes) {
    if (num_classes < 2) throw ConfigError("predict_logits: need at least 2 classes");
    if (num_classes > cfg.num_classes_max)
        throw ConfigError("predict_logits: " + std::to_string(num_classes) +
                          " classes exceeds num_classes_max " +
                          std::to_string(cfg.num_classes_max));
    const std::int64_t kc = input.context.dim(0);
    const std::int64_t t = input.test_cube.dim(0);
    if (input.context.ndim() != 3 || input.test_cube.ndim() != 3 ||
        input.context.dim(1) != input.test_cube.dim(1) ||
        input.context.dim(2) != input.test_cube.dim(2))
        throw ShapeError("predict_logits: context " + shape_str(input.context.shape()) +
                         " vs test " + shape_str(input.test_cube.shape()));

    const LatentCube joint{concat({input.context, input.test_cube}, 0)};
    const AttentionMask mask = AttentionMask::predictor(kc, t);
    const LatentCube out = run_stack(joint, mask, params, "predictor.", cfg.blocks, cfg);

    // Test rows' target-column latents -> final norm -> shared head.
    const Tensor test_rows = slice(out.values, 0, kc, t);
    const Tensor tgt_col = reshape(slice(test_rows, 1, out.cols() - 1, 1), {t, cfg.embed_dim});
    const Tensor normed = layer_norm(tgt_col, params.at("predictor.head.norm_g"),
                                     params.at("predictor.head.norm_b"));
    const Tensor all_logits =
        add(matmul(normed, params.at("predictor.head.w")), params.at("predictor.head.b"));
    return ClassLogits{slice(all_logits, 1, 0, num_classes)};
}

Tensor embed_test_batch(const Table& test, const ModelParams& params, const ModelConfig& cfg) {
    Table masked = test;
    masked.labels.assign(static_cast<std::size_t>(test.n_rows), kMissingTarget);
    return embed_cells(masked, params, "predictor.", cfg).values;
}

ClassLogits predict_from_table(const Table& train, const Table& test_features,
                               const ModelParams& params, const ModelConfig& cfg) {
    if (!train.has_labels()) throw DataError("predict_from_table: training table lacks labels");
    if (train.num_classes < 2) throw DataError("predict_from_table: need at least 2 classes");
    PredictorInput input;
    input.context = embed_cells(train, params, "predictor.", cfg).values;
    input.test_cube = embed_test_batch(test_features, params, cfg);
    return predict_logits(input, params, cfg, train.num_classes);
}

}  // namespace taco
