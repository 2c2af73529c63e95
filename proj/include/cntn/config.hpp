// Experiment configuration: a plain-text file of [section] headers and
// key = value lines. Missing keys keep their defaults.
#pragma once

#include "cntn/cyclic.hpp"
#include "cntn/gaitgen.hpp"
#include "cntn/gaugekit.hpp"

#include <filesystem>
#include <string>

namespace cntn {

inline constexpr int kConfigFormatVersion = 1;

struct ExperimentConfig {
    int format_version = kConfigFormatVersion;
    std::string data_dir;       // holds train.jsonl / test.jsonl; empty means generate from `gen`
    GeneratorSpec gen;
    Corruption corruption;      // applied after generation
    TrainerConfig trainer;
    long eval_every = 0;        // snapshot cadence in iterations, 0 disables
    EvalProtocol eval;
    std::string output_dir = "runs/default";

    bool operator==(const ExperimentConfig&) const = default;

    DatasetManifest manifest() const;
};

std::string serialize(const ExperimentConfig& cfg);

/// Throws std::invalid_argument with the offending line number on unknown
/// sections or keys and on malformed values.
ExperimentConfig parse_config(const std::string& text);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg);

/// FNV-1a of the serialized form.
std::uint64_t config_hash(const ExperimentConfig& cfg);

/// Sets the run length and rescales the schedule and LR milestone to it.
void set_iterations(TrainerConfig& cfg, long iterations);

/// The cyclic/AND defaults that go with a training mode: on for cntn, off otherwise.
void apply_mode_defaults(TrainerConfig& cfg, TrainMode mode);

// Environment overrides.
//   CNTN_OUTPUT_ROOT  prefix for relative output directories
//   CNTN_THREADS      worker count for the ablation grid (default 1)
std::filesystem::path resolve_output_dir(const std::string& dir);
int thread_count();

}  // namespace cntn
