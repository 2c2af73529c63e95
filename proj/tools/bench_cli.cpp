// bench_cli: dataset generation, training, evaluation and analysis commands.
#include "cntn/commands.hpp"

#include "CLI11.hpp"

#include <iostream>

using namespace cntn;

namespace {

const std::map<std::string, CorruptionMode> kCorruptions{{"none", CorruptionMode::None},
                                                         {"label", CorruptionMode::Label},
                                                         {"augmentation", CorruptionMode::Augmentation},
                                                         {"split", CorruptionMode::Split}};

const std::map<std::string, TrainMode> kModes{{"cntn", TrainMode::Cntn},
                                              {"supervised", TrainMode::Supervised},
                                              {"selfsup", TrainMode::SelfSup},
                                              {"coteach-baseline", TrainMode::CoteachBaseline}};

struct TrainFlags {
    std::string config;
    std::string data;
    std::string out;
    std::string mode;
    bool trace = false;
    long iterations = 0;
    std::uint64_t seed = 0;
    std::optional<bool> cyclic;
    std::optional<bool> and_enabled;
    double lr = 0.0;
    long eval_every = -1;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
    cmd->add_option("--config", f.config, "Experiment config file")->check(CLI::ExistingFile);
    cmd->add_option("--data", f.data, "Directory with train.jsonl / test.jsonl (default: generate)");
    cmd->add_option("--out", f.out, "Output directory");
    cmd->add_option("--mode", f.mode, "cntn | supervised | selfsup | coteach-baseline")
        ->check(CLI::IsMember({"cntn", "supervised", "selfsup", "coteach-baseline"}));
    cmd->add_flag("--trace", f.trace, "Record the per-iteration parameter trace");
    cmd->add_option("--iterations", f.iterations, "Iterations (rescales schedule and LR milestone)")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--seed", f.seed, "Trainer seed");
    cmd->add_flag("--cyclic,!--no-cyclic", f.cyclic, "EMA transfer F -> M each iteration");
    cmd->add_flag("--and,!--no-and", f.and_enabled, "Adaptive noise mask");
    cmd->add_option("--lr", f.lr, "Learning rate")->check(CLI::PositiveNumber);
    cmd->add_option("--eval-every", f.eval_every, "Snapshot cadence for the memorization curve (0 = off)")
        ->check(CLI::NonNegativeNumber);
}

ExperimentConfig resolve(const TrainFlags& f, CLI::App* cmd) {
    ExperimentConfig cfg = f.config.empty() ? ExperimentConfig{} : load_config(f.config);
    if (!f.data.empty()) cfg.data_dir = f.data;
    if (!f.out.empty()) cfg.output_dir = f.out;
    if (!f.mode.empty()) apply_mode_defaults(cfg.trainer, kModes.at(f.mode));
    if (f.cyclic) cfg.trainer.cyclic = *f.cyclic;
    if (f.and_enabled) cfg.trainer.and_enabled = *f.and_enabled;
    if (f.trace) cfg.trainer.record_trace = true;
    if (cmd->count("--iterations")) set_iterations(cfg.trainer, f.iterations);
    if (cmd->count("--seed")) cfg.trainer.seed = f.seed;
    if (cmd->count("--lr")) cfg.trainer.optimizer.lr = f.lr;
    if (f.eval_every >= 0) cfg.eval_every = f.eval_every;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-network noisy-label training bench on synthetic gait-like sequence sets"};
    app.require_subcommand(1);

    GenDataArgs gen;
    gen.out = "data";
    GeneratorSpec gen_cli;
    Corruption gen_corr_cli;
    std::string gen_corrupt = "none";
    std::string gen_config;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate train/test datasets and a manifest");
    gen_cmd->add_option("--out", gen.out, "Output directory");
    gen_cmd->add_option("--config", gen_config, "Take [generator] and [corruption] from a config file")
        ->check(CLI::ExistingFile);
    gen_cmd->add_option("--seed", gen_cli.seed, "Generator seed");
    gen_cmd->add_option("--train-ids", gen_cli.n_train_ids)->check(CLI::PositiveNumber);
    gen_cmd->add_option("--test-ids", gen_cli.n_test_ids)->check(CLI::PositiveNumber);
    gen_cmd->add_option("--views", gen_cli.n_views)->check(CLI::PositiveNumber);
    gen_cmd->add_option("--corrupt", gen_corrupt, "none | label | augmentation | split")
        ->check(CLI::IsMember({"none", "label", "augmentation", "split"}));
    gen_cmd->add_option("--rate,--fraction", gen_corr_cli.rate, "Noise rate, or id fraction for split")
        ->check(CLI::Range(0.0, 1.0));
    gen_cmd->add_option("--corrupt-seed", gen_corr_cli.seed);
    gen_cmd->add_flag("--force", gen.force, "Overwrite existing files");

    CorruptArgs cor;
    std::string cor_mode;
    auto* cor_cmd = app.add_subcommand("corrupt", "Apply a corruption to an existing dataset directory");
    cor_cmd->add_option("--in", cor.in, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    cor_cmd->add_option("--out", cor.out, "Output directory (default: in place)");
    cor_cmd->add_option("--mode", cor_mode, "label | augmentation | split")
        ->required()
        ->check(CLI::IsMember({"label", "augmentation", "split"}));
    cor_cmd->add_option("--rate,--fraction", cor.corruption.rate)->required()->check(CLI::Range(0.0, 1.0));
    cor_cmd->add_option("--seed", cor.corruption.seed);
    cor_cmd->add_flag("--force", cor.force, "Overwrite existing files");

    TrainFlags train;
    auto* train_cmd = app.add_subcommand("train", "Train one configuration");
    add_train_flags(train_cmd, train);

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Rank-1 evaluation of a checkpoint");
    eval_cmd->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--data", ev.dataset, "test.jsonl or a directory holding it")->required()->check(CLI::ExistingPath);
    eval_cmd->add_option("--out", ev.out_dir, "Directory for rank1.csv / rank1.json / variance.csv")->required();
    eval_cmd->add_flag("--exclude-same-view,!--include-same-view", ev.protocol.exclude_same_view,
                       "Drop same-view gallery entries (default on)");
    eval_cmd->add_option("--gallery-groups", ev.protocol.gallery_nm_groups, "NM groups enrolled in the gallery")
        ->check(CLI::PositiveNumber);

    TrainFlags abl;
    int seeds = 5;
    auto* abl_cmd = app.add_subcommand("ablate", "Run the eight-row component ablation over several seeds");
    add_train_flags(abl_cmd, abl);
    abl_cmd->add_option("--seeds", seeds)->check(CLI::PositiveNumber);

    std::string run_dir;
    auto* ver_cmd = app.add_subcommand("verify-eq5", "Check a run's trace against the closed-form M parameters");
    ver_cmd->add_option("run_dir", run_dir, "Training output directory")->required();

    long batch = 32;
    double sigma = 0.2;
    auto* cost_cmd = app.add_subcommand("cost", "Forward-pass cost of small-loss co-teaching vs. this method");
    cost_cmd->add_option("-N,--batch", batch)->check(CLI::PositiveNumber);
    cost_cmd->add_option("--sigma", sigma, "Noise rate")->check(CLI::Range(0.0, 0.999999));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*gen_cmd) {
            if (!gen_config.empty()) {
                const ExperimentConfig c = load_config(gen_config);
                gen.gen = c.gen;
                gen.corruption = c.corruption;
            }
            if (gen_cmd->count("--seed")) gen.gen.seed = gen_cli.seed;
            if (gen_cmd->count("--train-ids")) gen.gen.n_train_ids = gen_cli.n_train_ids;
            if (gen_cmd->count("--test-ids")) gen.gen.n_test_ids = gen_cli.n_test_ids;
            if (gen_cmd->count("--views")) gen.gen.n_views = gen_cli.n_views;
            if (gen_cmd->count("--corrupt")) gen.corruption.mode = kCorruptions.at(gen_corrupt);
            if (gen_cmd->count("--rate")) gen.corruption.rate = gen_corr_cli.rate;
            if (gen_cmd->count("--corrupt-seed")) gen.corruption.seed = gen_corr_cli.seed;
            return cmd_gen_data(gen, std::cout);
        }
        if (*cor_cmd) {
            cor.corruption.mode = kCorruptions.at(cor_mode);
            return cmd_corrupt(cor, std::cout);
        }
        if (*train_cmd) return cmd_train(resolve(train, train_cmd), std::cout);
        if (*eval_cmd) return cmd_eval(ev, std::cout);
        if (*abl_cmd) return cmd_ablate({resolve(abl, abl_cmd), seeds}, std::cout);
        if (*ver_cmd) return cmd_verify_eq5(run_dir, std::cout);
        if (*cost_cmd) return cmd_cost(batch, sigma, std::cout);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
