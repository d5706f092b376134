#pragma once

#include "taco/tab2d.hpp"

namespace taco {

// Already-embedded context rows plus an embedded test batch (targets all
// MISSING_TARGET). The context bypasses the predictor's encoder entirely.
struct PredictorInput {
    Tensor context;    // [context_rows, M+1, L]
    Tensor test_cube;  // [test_rows, M+1, L]
};

struct ClassLogits {
    Tensor values;  // [test_rows, C]
};

// Registers predictor encoder/blocks plus the readout head.
void init_predictor_params(ModelParams& params, const ModelConfig& cfg, Rng& rng);

// Runs the predictor stack over [context; test] with the predictor mask
// (context<->context bidirectional, test rows see context and themselves) and
// reads logits from each test row's target-column latent through the shared
// linear head, sliced to the task's C classes.
ClassLogits predict_logits(const PredictorInput& input, const ModelParams& params,
                           const ModelConfig& cfg, int num_classes);

// POT path: embeds the raw training table (real labels) and the test batch
// (MISSING_TARGET) with the predictor's encoder, then delegates.
ClassLogits predict_from_table(const Table& train, const Table& test_features,
                               const ModelParams& params, const ModelConfig& cfg);

// Embeds a feature table as a test batch: target column forced to
// MISSING_TARGET regardless of any labels present.
Tensor embed_test_batch(const Table& test, const ModelParams& params, const ModelConfig& cfg);

}  // namespace taco
