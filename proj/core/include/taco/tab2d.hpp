#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "taco/model_config.hpp"
#include "taco/params.hpp"
#include "taco/rng.hpp"
#include "taco/table.hpp"
#include "taco/tensor.hpp"

namespace taco {

// Rank-3 latent representation of a table: rows x (M+1) x L. The target
// column is always the last column slice.
struct LatentCube {
    Tensor values;  // [rows, cols, L]

    std::int64_t rows() const { return values.dim(0); }
    std::int64_t cols() const { return values.dim(1); }
    std::int64_t latent_dim() const { return values.dim(2); }
};

// Boolean rows x rows attention mask. The diagonal is always allowed; a row
// that could attend to nothing is rejected at construction.
class AttentionMask {
  public:
    AttentionMask(std::int64_t rows, std::vector<std::uint8_t> allow);

    static AttentionMask full(std::int64_t rows);
    // Layout [context rows; test rows]: context<->context bidirectional,
    // test->context allowed, context->test and test->test forbidden.
    static AttentionMask predictor(std::int64_t context_rows, std::int64_t test_rows);

    std::int64_t rows() const { return rows_; }
    bool allowed(std::int64_t i, std::int64_t j) const {
        return allow_[static_cast<std::size_t>(i * rows_ + j)] != 0;
    }

    // 0 where allowed, a large negative constant where masked.
    Tensor additive() const;

  private:
    std::int64_t rows_;
    std::vector<std::uint8_t> allow_;
};

// Registers encoder + B block parameters for one module under `prefix`
// (e.g. "compressor." or "predictor.").
void init_tab2d_params(ModelParams& params, const std::string& prefix, const ModelConfig& cfg,
                       Rng& rng);

// Sentinel rows of the target embedding table.
std::int64_t target_embedding_rows(const ModelConfig& cfg);
std::int64_t target_embedding_id(int label, const ModelConfig& cfg);

// Per-cell encoder. Numeric cells go through a learned affine projection of
// the scalar value, categorical cells through a shared embedding table
// (overflow buckets to the last slot), and the target column through its own
// table with dedicated MISSING_TARGET / MASK_PLACEHOLDER rows.
LatentCube embed_cells(const Table& table, const ModelParams& params, const std::string& prefix,
                       const ModelConfig& cfg);

// Pre-norm residual sublayers: out = x + Sublayer(LN(x)).
LatentCube row_attention(const LatentCube& cube, const AttentionMask& mask,
                         const ModelParams& params, const std::string& prefix,
                         const ModelConfig& cfg);
LatentCube col_attention(const LatentCube& cube, const ModelParams& params,
                         const std::string& prefix, const ModelConfig& cfg);
LatentCube transformer_block(const LatentCube& cube, const AttentionMask& mask,
                             const ModelParams& params, const std::string& block_prefix,
                             const ModelConfig& cfg);

// Applies `n_blocks` blocks named "<prefix>block<i>."; n_blocks = 0 is the
// identity.
LatentCube run_stack(const LatentCube& cube, const AttentionMask& mask, const ModelParams& params,
                     const std::string& prefix, int n_blocks, const ModelConfig& cfg);

}  // namespace taco
