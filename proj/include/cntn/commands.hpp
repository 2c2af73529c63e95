// Subcommand implementations behind the bench_cli tool. Each returns a process
// exit code and writes human-readable output to `out`.
#pragma once

#include "cntn/config.hpp"

#include <array>
#include <filesystem>
#include <iosfwd>
#include <string>

namespace cntn {

namespace fs = std::filesystem;

inline constexpr const char* kTrainFile = "train.jsonl";
inline constexpr const char* kTestFile = "test.jsonl";
inline constexpr const char* kManifestFile = "manifest.json";

struct GenDataArgs {
    fs::path out;
    GeneratorSpec gen;
    Corruption corruption;
    bool force = false;
};

int cmd_gen_data(const GenDataArgs& args, std::ostream& out);

struct CorruptArgs {
    fs::path in;
    fs::path out;
    Corruption corruption;
    bool force = false;
};

/// Applies one more corruption to an existing train split and records it in
/// the copied manifest.
int cmd_corrupt(const CorruptArgs& args, std::ostream& out);

struct LoadedData {
    Dataset train;
    Dataset test;
    DatasetManifest manifest;
};

/// Reads `data_dir` when set, otherwise generates from the config.
LoadedData load_or_generate(const ExperimentConfig& cfg);

/// Writes config.snapshot, model_f.ckpt, model_f_init.ckpt, model_m.ckpt and
/// model_m_init.ckpt (when M exists), trace.bin (when tracing) and
/// metrics.jsonl into the resolved output directory. On a non-finite loss,
/// writes diagnostic.json and returns 3.
int cmd_train(const ExperimentConfig& cfg, std::ostream& out);

struct EvalArgs {
    fs::path checkpoint;
    fs::path dataset;   // test JSONL file or a directory holding test.jsonl
    fs::path out_dir;   // receives rank1.csv, rank1.json, variance.csv
    EvalProtocol protocol;
};

int cmd_eval(const EvalArgs& args, std::ostream& out);

struct AblationVariant {
    const char* name;
    TrainMode mode;
    bool cyclic;
    bool and_enabled;
};

/// Rows #1..#8: supervised, +cyclic, +cyclic+AND, selfsup, selfsup+cyclic,
/// full without cyclic and AND, full without AND, full.
const std::array<AblationVariant, 8>& ablation_grid();

/// Seed `s` of an ablation grid shifts the generator, corruption and trainer
/// seeds of `base` by s.
ExperimentConfig ablation_cell_config(const ExperimentConfig& base, const AblationVariant& v, int seed_offset);

/// Trains one cell and evaluates F on the test split.
EvalReport run_ablation_cell(const ExperimentConfig& cell_cfg, const LoadedData& data);

struct AblationTable {
    int seeds = 0;
    // [row][seed] per-condition means, NaN for a condition with no probes
    std::array<std::vector<std::array<double, 3>>, 8> cells;

    double mean(std::size_t row, Condition c) const;
    double stddev(std::size_t row, Condition c) const;
};

AblationTable run_ablation(const ExperimentConfig& base, int seeds, int threads);
void write_ablation_csv(std::ostream& os, const AblationTable& t, std::uint64_t config_hash);

struct AblateArgs {
    ExperimentConfig base;
    int seeds = 5;
};

int cmd_ablate(const AblateArgs& args, std::ostream& out);

inline constexpr double kEq5Tolerance = 1e-8;

/// Replays the trace in `run_dir` against its initial checkpoints.
int cmd_verify_eq5(const fs::path& run_dir, std::ostream& out);

int cmd_cost(long batch, double noise_rate, std::ostream& out);

}  // namespace cntn
