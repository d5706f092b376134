#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "taco/checkpoint.hpp"
#include "taco/model_config.hpp"
#include "taco/params.hpp"
#include "taco/prior.hpp"

namespace taco {

enum class ArchMode { taco, pot };

struct RateMode {
    enum class Kind { fixed, multi };
    Kind kind = Kind::fixed;
    double fixed_rate = 0.04;
    std::vector<double> multi_rates{0.01, 0.02, 0.04, 0.08, 0.16};

    static RateMode fixed(double r);
    static RateMode multi();
};

struct TrainConfig {
    std::int64_t steps = 20000;
    int micro_batch = 32;   // episodes per optimizer step
    int accumulation = 1;   // micro-batches summed per update
    double peak_lr = 1e-4;
    std::int64_t warmup_steps = 500;
    double weight_decay = 1e-2;
    double clip_norm = 1.0;
    RateMode rate_mode;
    bool freeze_predictor = false;
    std::int64_t checkpoint_interval = 1000;
    std::uint64_t seed = 0;
    ArchMode arch = ArchMode::taco;
    ModelConfig model;
    PriorConfig prior = desk_prior();
    // Optional curriculum: with probability aux_prior_prob an episode is drawn
    // from aux_prior instead (used to expose the compressor to longer
    // contexts than the base sequence length).
    PriorConfig aux_prior = desk_prior();
    double aux_prior_prob = 0.0;
    int min_k = 1;
    int threads = 1;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::string out_dir;
    std::string run_name = "run";

    void validate() const;
};

TrainConfig train_config_from_file(const std::string& path);
void train_config_to_file(const TrainConfig& config, const std::string& path);

// Fresh parameter initialization for the configured architecture:
// compressor + bridge + predictor for taco, predictor only for pot.
ModelParams init_model(const ModelConfig& cfg, ArchMode arch, std::uint64_t seed);

// Linear warmup from 0 to peak_lr over warmup_steps, then cosine decay to 0
// at `steps`.
double lr_schedule(std::int64_t step, const TrainConfig& config);

// Differentiable end-to-end loss for one raw episode: preprocess, compress
// (taco) or embed directly (pot), bridge, predict, mean cross-entropy over
// the test rows.
Tensor episode_loss(const Episode& episode, std::int64_t k, std::uint64_t dummy_seed,
                    ModelParams& params, const ModelConfig& cfg, ArchMode arch);

// AdamW with decoupled weight decay. Decay applies to matrices (ndim >= 2);
// norms and biases are exempt. State is keyed by parameter name.
class AdamW {
  public:
    void init(const ModelParams& params);

    // `grads` must be averaged already; frozen parameters (by name) receive
    // no update and their state does not advance.
    void apply(ModelParams& params, const GradMap& grads, double lr, const TrainConfig& config,
               const std::vector<std::string>& frozen);

    std::int64_t step_count() const { return step_count_; }

    void export_state(std::vector<std::pair<std::string, Tensor>>& out) const;
    void import_state(const CheckpointData& data, const ModelParams& params);

  private:
    struct Slot {
        std::string name;
        std::vector<double> m, v;
    };
    std::vector<Slot> slots_;
    std::int64_t step_count_ = 0;
};

struct StepStats {
    double loss = 0.0;
    double grad_norm = 0.0;       // pre-clip global norm
    double post_clip_norm = 0.0;
    double lr = 0.0;
    std::vector<double> rates;    // compression rate drawn per episode (taco)
    double episodes_per_s = 0.0;
};

// One optimizer step over `episodes`: per-episode losses and gradients are
// computed (in parallel when config.threads > 1), summed in episode order,
// averaged, clipped to clip_norm, and applied. Throws on non-finite loss,
// naming the offending episode's task id.
StepStats train_step(const std::vector<Episode>& episodes, ModelParams& params, AdamW& optimizer,
                     const TrainConfig& config, std::int64_t step);

// Compression rates for one step's episodes, derived from (seed, step, index).
std::vector<double> rates_for_step(const TrainConfig& config, std::int64_t step);

// Episodes for one step, derived from (seed, step, index); independent of
// thread count and of any other step.
std::vector<Episode> episodes_for_step(const TrainConfig& config, std::int64_t step);

struct TrainResult {
    std::string final_checkpoint;
    std::int64_t steps_done = 0;
    double last_loss = 0.0;
};

// Full loop with periodic checkpoints and an ndjson metrics log. Passing a
// resume checkpoint continues bit-identically with the uninterrupted run.
TrainResult run_training(const TrainConfig& config,
                         const std::optional<std::string>& resume_from = std::nullopt,
                         const std::function<void(std::int64_t, const StepStats&)>& on_step = {});

// Checkpoint helpers shared by the trainer, CLI and inference.
CheckpointData make_checkpoint(const ModelParams& params, const ModelConfig& cfg, ArchMode arch,
                               std::int64_t step, const AdamW* optimizer);
ModelParams params_from_checkpoint(const CheckpointData& data);

}  // namespace taco
