// Cyclic two-network training: the forgetting network F learns from labels and
// from the memorizing network M's soft predictions; M absorbs F through an
// exponential moving average at the start of every iteration and is otherwise
// updated by the consistency loss alone.
#pragma once

#include "cntn/gaitgen.hpp"
#include "cntn/lossbank.hpp"
#include "cntn/setnet.hpp"
#include "cntn/sieve.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <stdexcept>

namespace cntn {

enum class TrainMode { Cntn, Supervised, SelfSup, CoteachBaseline };

std::string to_string(TrainMode m);
TrainMode parse_train_mode(const std::string& s);

struct TrainerConfig {
    int P = 8;  // identities per batch
    int K = 4;  // sequences per identity
    double momentum = 0.99;
    long iterations = 2000;
    TrainMode mode = TrainMode::Cntn;
    bool cyclic = true;       // EMA transfer F -> M before each iteration
    bool and_enabled = true;  // adaptive noise mask on F's supervised losses
    OptimizerConfig optimizer{OptimizerKind::Sgd, 0.1, 0.9, 0.9, 0.999, 1e-8, {1000}, 0.1};
    CoeffSchedule schedule = CoeffSchedule::noisy_default(2000);
    AugmentSpec augment = AugmentSpec::Standard;
    std::uint64_t seed = 1;
    bool record_trace = false;
    double margin = 0.2;
    double temperature = 1.0;
    bool detach_teacher = false;
    long sieve_warmup = 350;
    double sieve_beta = 0.9;
    double coteach_noise_rate = 0.2;  // prior the small-loss baseline needs
    Index d_hidden = 64;
    Index d_emb = 32;

    bool operator==(const TrainerConfig&) const = default;

    int batch_size() const { return P * K; }
    void validate() const;

    bool uses_consistency() const { return mode == TrainMode::Cntn || mode == TrainMode::SelfSup; }
    bool uses_supervised() const { return mode == TrainMode::Cntn || mode == TrainMode::Supervised; }
    bool uses_mil() const { return mode == TrainMode::Cntn; }
    /// Whether a second network exists at all.
    bool has_second_network() const {
        return mode != TrainMode::Supervised || cyclic || and_enabled;
    }
    bool ema_active() const { return cyclic && mode != TrainMode::CoteachBaseline; }
    bool mask_active() const { return and_enabled && mode != TrainMode::SelfSup && mode != TrainMode::CoteachBaseline; }
};

/// Raised when a loss turns non-finite; `diagnostic` is a JSON dump of the batch.
class NonFiniteLoss : public std::runtime_error {
public:
    NonFiniteLoss(const std::string& what, std::string diagnostic)
        : std::runtime_error(what), diagnostic_(std::move(diagnostic)) {}
    const std::string& diagnostic() const { return diagnostic_; }

private:
    std::string diagnostic_;
};

struct Batch {
    std::vector<std::size_t> indices;  // into the dataset
    std::vector<int> labels;
    std::size_t size() const { return indices.size(); }
};

/// P x K batches: P distinct identities drawn uniformly, K sequences each
/// (without replacement when the identity has at least K, else with).
class PxKSampler {
public:
    explicit PxKSampler(const Dataset& data);
    Batch draw(int P, int K, RngStream& rng) const;
    std::size_t eligible_identities() const { return by_id_.size(); }

private:
    std::vector<std::pair<int, std::vector<std::size_t>>> by_id_;
};

Batch pxk_sampler(const Dataset& data, int P, int K, RngStream& rng);

struct MaskStats {
    std::size_t batch = 0;
    std::size_t kept = 0;
    std::size_t noisy = 0;         // ground truth: label differs from clean identity
    std::size_t masked_noisy = 0;  // noisy and masked out
    double mean_entropy = 0.0;
    double mean_ce = 0.0;

    double kept_fraction() const { return batch ? static_cast<double>(kept) / static_cast<double>(batch) : 0.0; }
    std::size_t masked() const { return batch - kept; }
};

struct TraceRecord {
    long k = 0;  // 1-based iteration
    std::uint64_t pre_ema_m_hash = 0;
    Vec delta_f;
    Vec delta_m;
    LossBreakdown losses;
    MaskStats mask;
};

struct TrainState {
    ModelParams f;
    std::optional<ModelParams> m;
    OptimizerState opt_f;
    std::optional<OptimizerState> opt_m;
    SieveState sieve;
    long iter = 0;  // iterations completed
    std::uint64_t forward_count = 0;
};

NetShape model_shape(const TrainerConfig& cfg, const Dataset& data);
TrainState init_train_state(const TrainerConfig& cfg, const NetShape& shape);

struct IterationResult {
    TrainState state;
    LossBreakdown losses;
    TraceRecord record;
    double lr = 0.0;
    std::uint64_t forwards = 0;  // network forward passes this iteration
};

/// One CNTN (or ablation-mode) iteration: EMA, augment, forward both networks,
/// consistency + masked supervised losses, CRC combination, updates.
IterationResult train_iteration(const Dataset& data, const Batch& batch, TrainState state, const TrainerConfig& cfg);

/// Small-loss co-teaching: each network ranks the batch by CE and its peer
/// trains on the ceil((1 - noise_rate) N) smallest.
IterationResult coteach_baseline_iteration(const Dataset& data, const Batch& batch, TrainState state,
                                           const TrainerConfig& cfg);

struct MetricsRow {
    long iter = 0;
    LossBreakdown losses;
    MaskStats mask;
    double lr = 0.0;
};

struct Snapshot {
    long iter = 0;
    ModelParams f;
};

struct Trace {
    NetShape layout;
    double momentum = 0.0;
    long total_iterations = 0;
    std::uint64_t config_hash = 0;
    std::vector<TraceRecord> steps;
};

struct RunOptions {
    long snapshot_every = 0;  // 0 disables snapshots
    std::function<void(const TraceRecord&)> on_trace;
    std::function<void(const MetricsRow&)> on_metrics;
    bool keep_trace = true;  // keep records in TrainResult::trace when tracing
};

struct TrainResult {
    ModelParams f;
    ModelParams f_init;
    std::optional<ModelParams> m;
    std::optional<ModelParams> m_init;
    std::optional<Trace> trace;
    std::vector<MetricsRow> metrics;
    std::vector<Snapshot> snapshots;
    std::uint64_t forward_count = 0;
};

/// Deterministic in (data, cfg). F is the inference model.
TrainResult run_training(const Dataset& data, const TrainerConfig& cfg, const RunOptions& opts = {});

// Trace file: 8-byte magic, u32 version, u32 reserved, u64 d_in, d_hidden,
// d_emb, n_classes, param_count, f64 momentum, u64 total iterations, u64
// config hash; then per iteration u64 k, u64 pre-EMA M hash, u64 record
// checksum, param_count doubles of delta_f and param_count doubles of delta_m.
inline constexpr std::uint32_t kTraceVersion = 1;

class TraceWriter {
public:
    TraceWriter(const std::filesystem::path& path, const NetShape& layout, double momentum, long total_iterations,
                std::uint64_t config_hash);
    void append(const TraceRecord& rec);
    void close();

private:
    std::ofstream os_;
    std::filesystem::path path_;
    Index params_ = 0;
};

/// A record whose checksum does not match its payload.
class TraceCorruption : public std::runtime_error {
public:
    TraceCorruption(long k, const std::string& what) : std::runtime_error(what), k_(k) {}
    long iteration() const { return k_; }

private:
    long k_;
};

void write_trace(const std::filesystem::path& path, const Trace& trace);
Trace read_trace(const std::filesystem::path& path);

}  // namespace cntn
