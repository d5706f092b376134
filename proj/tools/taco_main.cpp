// taco: train, fit/predict, and benchmark a compressor+predictor tabular
// in-context model from the command line.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include "taco/csv.hpp"
#include "taco/errors.hpp"
#include "taco/train.hpp"

namespace {

// Exit codes: 0 ok, 2 config error, 3 data error, 4 capacity error, 5 I/O.
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitCapacity = 4;
constexpr int kExitIo = 5;

int run_train(const std::string& config_path, std::optional<std::uint64_t> seed,
              std::optional<std::string> out_dir, std::optional<std::string> run_name,
              std::optional<std::int64_t> steps, bool freeze_predictor,
              std::optional<double> rate, bool multi_rate, std::optional<std::string> arch,
              const std::string& resume) {
    taco::TrainConfig config = taco::train_config_from_file(config_path);
    if (seed) config.seed = *seed;
    if (out_dir) config.out_dir = *out_dir;
    if (run_name) config.run_name = *run_name;
    if (steps) config.steps = *steps;
    if (freeze_predictor) config.freeze_predictor = true;
    if (rate) config.rate_mode = taco::RateMode::fixed(*rate);
    if (multi_rate) config.rate_mode = taco::RateMode::multi();
    if (arch) {
        if (*arch == "taco")
            config.arch = taco::ArchMode::taco;
        else if (*arch == "pot")
            config.arch = taco::ArchMode::pot;
        else
            throw taco::ConfigError("--arch must be taco or pot");
    }
    config.validate();

    std::printf("training %s: arch=%s steps=%lld micro_batch=%d seed=%llu out=%s\n",
                config.run_name.c_str(), config.arch == taco::ArchMode::taco ? "taco" : "pot",
                static_cast<long long>(config.steps), config.micro_batch,
                static_cast<unsigned long long>(config.seed), config.out_dir.c_str());

    const auto t0 = std::chrono::steady_clock::now();
    const taco::TrainResult result = taco::run_training(
        config, resume.empty() ? std::nullopt : std::optional<std::string>(resume),
        [&](std::int64_t step, const taco::StepStats& stats) {
            if ((step + 1) % 100 == 0 || step + 1 == config.steps) {
                const double mins =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() /
                    60.0;
                std::printf("step %lld/%lld loss %.4f grad %.3f lr %.2e (%.1f min)\n",
                            static_cast<long long>(step + 1), static_cast<long long>(config.steps),
                            stats.loss, stats.grad_norm, stats.lr, mins);
                std::fflush(stdout);
            }
        });
    std::printf("done: %s\n", result.final_checkpoint.c_str());
    return 0;
}

int run_sample_prior(const std::string& config_path, std::uint64_t seed, int count,
                     const std::string& out_dir) {
    taco::PriorConfig prior = taco::desk_prior();
    if (!config_path.empty()) {
        const taco::TrainConfig config = taco::train_config_from_file(config_path);
        prior = config.prior;
    }
    prior.seed = seed;
    std::filesystem::create_directories(out_dir);
    for (int i = 0; i < count; ++i) {
        const taco::Episode episode = taco::sample_episode_keyed(prior, static_cast<std::uint64_t>(i));
        const std::string base = out_dir + "/episode" + std::to_string(i);
        taco::save_csv(episode.train, base + ".train.csv");
        taco::save_csv(episode.test, base + ".test.csv");
        std::printf("episode %d: train %lld x %lld, test %lld, classes %d\n", i,
                    static_cast<long long>(episode.train.n_rows),
                    static_cast<long long>(episode.train.n_features()),
                    static_cast<long long>(episode.test.n_rows), episode.train.num_classes);
    }
    return 0;
}

}  // namespace

int run_fit_predict(CLI::App* cmd);  // taco_fit_predict.cpp
int run_bench(CLI::App* cmd);        // taco_bench_cmd.cpp
void register_fit_predict_options(CLI::App* cmd);
void register_bench_options(CLI::App* cmd);

int main(int argc, char** argv) {
    CLI::App app{"TACO: compressed tabular in-context learning"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "Meta-train a model on the synthetic SCM prior");
    std::string train_config;
    train->add_option("--config", train_config, "Training config JSON")->required();
    std::optional<std::uint64_t> seed;
    train->add_option("--seed", seed, "Override the run seed");
    std::optional<std::string> out_dir, run_name, arch;
    train->add_option("--out", out_dir, "Override the output directory");
    train->add_option("--run-name", run_name, "Override the run name");
    train->add_option("--arch", arch, "Architecture: taco or pot");
    std::optional<std::int64_t> steps;
    train->add_option("--steps", steps, "Override the step count");
    bool freeze_predictor = false;
    train->add_flag("--freeze-predictor", freeze_predictor,
                    "Train the compressor against a frozen predictor");
    std::optional<double> rate;
    train->add_option("--rate", rate, "Fixed compression rate (overrides config)");
    bool multi_rate = false;
    train->add_flag("--multi-rate", multi_rate, "Sample the rate from {1,2,4,8,16}% per episode");
    std::string resume;
    train->add_option("--resume", resume, "Resume from a checkpoint with optimizer state");

    // sample-prior
    auto* sample = app.add_subcommand("sample-prior", "Export synthetic episodes to CSV");
    std::string sample_config;
    sample->add_option("--config", sample_config, "Training config JSON (prior section is used)");
    std::uint64_t sample_seed = 0;
    sample->add_option("--seed", sample_seed, "Prior seed");
    int sample_count = 4;
    sample->add_option("--count", sample_count, "Number of episodes");
    std::string sample_out = "episodes";
    sample->add_option("--out", sample_out, "Output directory");

    auto* fit_predict = app.add_subcommand(
        "fit-predict", "Fit a context from a training table and predict test batches");
    register_fit_predict_options(fit_predict);
    auto* bench = app.add_subcommand("bench", "Run the (N, M) grid benchmark and emit reports");
    register_bench_options(bench);

    try {
        app.parse(argc, argv);
        if (train->parsed())
            return run_train(train_config, seed, out_dir, run_name, steps, freeze_predictor, rate,
                             multi_rate, arch, resume);
        if (sample->parsed()) return run_sample_prior(sample_config, sample_seed, sample_count, sample_out);
        if (fit_predict->parsed()) return run_fit_predict(fit_predict);
        if (bench->parsed()) return run_bench(bench);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const taco::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const taco::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitData;
    } catch (const taco::CapacityError& e) {
        std::fprintf(stderr, "capacity error: %s\n", e.what());
        return kExitCapacity;
    } catch (const taco::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kExitIo;
    } catch (const taco::CheckpointError& e) {
        std::fprintf(stderr, "checkpoint error: %s\n", e.what());
        return kExitData;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
