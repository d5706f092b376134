#pragma once

#include "taco/errors.hpp"

namespace taco {

// Architecture hyperparameters shared by the compressor and predictor.
// Desk-scale defaults; the reference setup uses 12 layers / 6 heads / 192 dims.
struct ModelConfig {
    int embed_dim = 32;       // L, per-cell latent width
    int blocks = 3;           // B, (row-attn, col-attn, FFN) triples per module
    int heads = 4;            // H
    int ffn_mult = 4;         // FFN hidden = ffn_mult * L
    int num_classes_max = 10;
    int max_categories = 32;  // categorical feature vocabulary; overflow shares the last slot

    int head_dim() const { return embed_dim / heads; }

    void validate() const {
        if (embed_dim < 1 || blocks < 1 || heads < 1 || ffn_mult < 1 || num_classes_max < 2 ||
            max_categories < 2)
            throw ConfigError("ModelConfig: all dimensions must be positive (num_classes_max >= 2)");
        if (embed_dim % heads != 0)
            throw ConfigError("ModelConfig: embed_dim must be divisible by heads");
    }

    bool operator==(const ModelConfig&) const = default;
};

}  // namespace taco
