// Retrieval evaluation, feature statistics, memorization curves, the closed-form
// parameter-evolution check and the forward-pass cost model.
#pragma once

#include "cntn/cyclic.hpp"

#include <optional>
#include <ostream>
#include <span>
#include <vector>

namespace cntn {

struct RetrievalEntry {
    Vec feature;
    int id = 0;
    int view = 0;
    Condition condition = Condition::NM;
};

/// Rank-1 percentages per (probe condition, probe view).
struct EvalReport {
    std::vector<Condition> conditions;                 // probe conditions present, in NM, BG, CL order
    int n_views = 0;
    std::vector<std::vector<std::optional<double>>> cells;  // [condition][view], empty when no probe
    std::vector<double> condition_mean;                // mean of that row's cells
    double overall_mean = 0.0;                         // mean of all cells
    std::size_t gallery_size = 0;
    std::size_t probe_size = 0;
    bool exclude_same_view = true;

    std::optional<double> mean_for(Condition c) const;
};

/// Nearest gallery entry by Euclidean distance (ties to the lowest gallery
/// index), restricted to other views when `exclude_same_view` is set.
EvalReport rank1(std::span<const RetrievalEntry> gallery, std::span<const RetrievalEntry> probe, bool exclude_same_view);

struct EvalProtocol {
    int gallery_nm_groups = 4;  // NM groups 0..g-1 enrol, everything else probes
    bool exclude_same_view = true;

    bool operator==(const EvalProtocol&) const = default;
};

/// Embeddings z of every sample, one column each.
Mat embed(const ModelParams& params, const Dataset& data);

EvalReport evaluate(const ModelParams& params, const Dataset& test, const EvalProtocol& protocol = {});

/// Biased trace-covariance statistics of a feature set.
struct VarianceStats {
    double intra_class = 0.0;     // mean over classes of mean squared deviation from the class centroid
    double intra_class_nm_bg = 0.0;
    double intra_class_cl = 0.0;
    double total = 0.0;           // mean squared deviation from the global centroid
};

VarianceStats variance_stats(const Mat& features, std::span<const int> ids, std::span<const Condition> conditions);

struct MemPoint {
    long iter = 0;
    double clean_acc = 0.0;
    std::optional<double> noisy_acc;  // absent when the set has no noisy samples
};

using MemCurve = std::vector<MemPoint>;

/// Accuracy of F's argmax against the assigned labels, separately on the
/// ground-truth clean and noisy parts of the training set.
MemCurve memorization_curve(std::span<const Snapshot> snapshots, const Dataset& train);

/// First index whose value reaches `fraction` of the final value.
std::size_t first_reaching(const std::vector<double>& curve, double fraction);

struct Eq5Result {
    double max_rel_deviation = 0.0;
    ModelParams replay_m;   // recurrence: EMA then add delta_m each step
    ModelParams closed_m;   // closed form
    ModelParams replay_f;
};

/// Reconstructs M after N steps two ways and compares them elementwise,
/// |a - b| / max(|a|, |b|, 1e-12).
Eq5Result eq5_verify(const Trace& trace, const ModelParams& f0, const ModelParams& m0, double m);

double max_rel_deviation(const Vec& a, const Vec& b, double floor = 1e-12);

struct CostModel {
    double coteach = 0.0;     // 2N(2 - sigma)
    double cntn_aug = 0.0;    // 2N
    double cntn_plain = 0.0;  // N

    double speedup_aug() const { return coteach / cntn_aug; }
    double speedup_plain() const { return coteach / cntn_plain; }
};

CostModel cost_model(long batch, double noise_rate);

/// Forward passes the instrumented small-loss baseline performs per iteration.
std::uint64_t coteach_forwards(long batch, double noise_rate);

// Exports. Every file ends with (CSV) or carries (JSON) the config hash.
void write_eval_csv(std::ostream& os, const EvalReport& r, std::uint64_t config_hash);
void write_eval_json(std::ostream& os, const EvalReport& r, std::uint64_t config_hash);
void write_variance_csv(std::ostream& os, const VarianceStats& v, std::uint64_t config_hash);
void write_memcurve_csv(std::ostream& os, const MemCurve& c, std::uint64_t config_hash);

}  // namespace cntn
