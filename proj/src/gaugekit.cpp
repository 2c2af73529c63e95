#include "cntn/gaugekit.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

namespace cntn {

namespace {

std::string fixed4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

double class_variance(const Mat& features, std::span<const int> ids, const std::vector<Index>& subset) {
    std::map<int, std::vector<Index>> by_class;
    for (Index i : subset) by_class[ids[static_cast<std::size_t>(i)]].push_back(i);
    if (by_class.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& [id, members] : by_class) {
        Vec centroid = Vec::Zero(features.rows());
        for (Index i : members) centroid += features.col(i);
        centroid /= static_cast<double>(members.size());
        double v = 0.0;
        for (Index i : members) v += (features.col(i) - centroid).squaredNorm();
        acc += v / static_cast<double>(members.size());
    }
    return acc / static_cast<double>(by_class.size());
}

}  // namespace

std::optional<double> EvalReport::mean_for(Condition c) const {
    for (std::size_t i = 0; i < conditions.size(); ++i)
        if (conditions[i] == c) return condition_mean[i];
    return std::nullopt;
}

EvalReport rank1(std::span<const RetrievalEntry> gallery, std::span<const RetrievalEntry> probe, bool exclude_same_view) {
    if (gallery.empty() || probe.empty()) throw std::invalid_argument("rank1: empty gallery or probe set");
    const Index dim = gallery.front().feature.size();
    for (const auto& set : {gallery, probe})
        for (const RetrievalEntry& e : set)
            if (e.feature.size() != dim) throw std::invalid_argument("rank1: feature dimension mismatch");

    EvalReport r;
    r.exclude_same_view = exclude_same_view;
    r.gallery_size = gallery.size();
    r.probe_size = probe.size();
    for (const RetrievalEntry& e : probe) r.n_views = std::max(r.n_views, e.view + 1);
    for (Condition c : {Condition::NM, Condition::BG, Condition::CL}) {
        if (std::any_of(probe.begin(), probe.end(), [c](const RetrievalEntry& e) { return e.condition == c; }))
            r.conditions.push_back(c);
    }
    const auto row_of = [&](Condition c) {
        return static_cast<std::size_t>(std::find(r.conditions.begin(), r.conditions.end(), c) - r.conditions.begin());
    };
    std::vector<std::vector<long>> hits(r.conditions.size(), std::vector<long>(static_cast<std::size_t>(r.n_views), 0));
    std::vector<std::vector<long>> counts = hits;

    for (std::size_t pi = 0; pi < probe.size(); ++pi) {
        const RetrievalEntry& p = probe[pi];
        double best = std::numeric_limits<double>::infinity();
        std::optional<std::size_t> best_g;
        for (std::size_t gi = 0; gi < gallery.size(); ++gi) {
            if (exclude_same_view && gallery[gi].view == p.view) continue;
            const double d = (gallery[gi].feature - p.feature).squaredNorm();
            if (!best_g || d < best) {
                best = d;
                best_g = gi;
            }
        }
        if (!best_g) {
            throw StructuralError("rank1: probe " + std::to_string(pi) + " (id " + std::to_string(p.id) + ", view " +
                                  std::to_string(p.view) + ") has no admissible gallery entry");
        }
        const std::size_t row = row_of(p.condition);
        const auto col = static_cast<std::size_t>(p.view);
        ++counts[row][col];
        if (gallery[*best_g].id == p.id) ++hits[row][col];
    }

    double all_sum = 0.0;
    long all_cells = 0;
    r.cells.resize(r.conditions.size());
    for (std::size_t c = 0; c < r.conditions.size(); ++c) {
        double sum = 0.0;
        long cells = 0;
        for (std::size_t v = 0; v < static_cast<std::size_t>(r.n_views); ++v) {
            if (counts[c][v] == 0) {
                r.cells[c].push_back(std::nullopt);
                continue;
            }
            const double pct = 100.0 * static_cast<double>(hits[c][v]) / static_cast<double>(counts[c][v]);
            r.cells[c].push_back(pct);
            sum += pct;
            ++cells;
        }
        r.condition_mean.push_back(cells ? sum / static_cast<double>(cells) : 0.0);
        all_sum += sum;
        all_cells += cells;
    }
    r.overall_mean = all_cells ? all_sum / static_cast<double>(all_cells) : 0.0;
    return r;
}

Mat embed(const ModelParams& params, const Dataset& data) {
    Mat z(params.shape().d_emb, static_cast<Index>(data.size()));
    for (std::size_t i = 0; i < data.size(); ++i) z.col(static_cast<Index>(i)) = forward(data.samples[i].frames, params).z;
    return z;
}

EvalReport evaluate(const ModelParams& params, const Dataset& test, const EvalProtocol& protocol) {
    if (test.d_in != params.shape().d_in) {
        throw std::invalid_argument("evaluate: dataset frame dimension " + std::to_string(test.d_in) +
                                    " does not match model input " + std::to_string(params.shape().d_in));
    }
    const Mat z = embed(params, test);
    std::vector<RetrievalEntry> gallery;
    std::vector<RetrievalEntry> probe;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const SequenceSample& s = test.samples[i];
        RetrievalEntry e{z.col(static_cast<Index>(i)), s.identity, s.view, s.condition};
        const bool enrol = s.condition == Condition::NM && s.group < protocol.gallery_nm_groups;
        (enrol ? gallery : probe).push_back(std::move(e));
    }
    return rank1(gallery, probe, protocol.exclude_same_view);
}

VarianceStats variance_stats(const Mat& features, std::span<const int> ids, std::span<const Condition> conditions) {
    const Index n = features.cols();
    if (n == 0) throw std::invalid_argument("variance_stats: empty feature set");
    if (static_cast<std::size_t>(n) != ids.size() || ids.size() != conditions.size()) {
        throw std::invalid_argument("variance_stats: need one id and condition per feature");
    }
    std::vector<Index> all;
    std::vector<Index> nm_bg;
    std::vector<Index> cl;
    for (Index i = 0; i < n; ++i) {
        all.push_back(i);
        (conditions[static_cast<std::size_t>(i)] == Condition::CL ? cl : nm_bg).push_back(i);
    }
    VarianceStats v;
    v.intra_class = class_variance(features, ids, all);
    v.intra_class_nm_bg = class_variance(features, ids, nm_bg);
    v.intra_class_cl = class_variance(features, ids, cl);
    const Vec centroid = features.rowwise().mean();
    v.total = (features.colwise() - centroid).colwise().squaredNorm().sum() / static_cast<double>(n);
    return v;
}

MemCurve memorization_curve(std::span<const Snapshot> snapshots, const Dataset& train) {
    MemCurve curve;
    long prev = -1;
    for (const Snapshot& snap : snapshots) {
        if (snap.iter <= prev) throw std::invalid_argument("memorization_curve: snapshots must be strictly ordered");
        prev = snap.iter;
        long clean = 0, clean_hit = 0, noisy = 0, noisy_hit = 0;
        for (const SequenceSample& s : train.samples) {
            const bool hit = argmax(forward(s.frames, snap.f).p) == s.identity;
            if (s.identity == s.clean_identity) {
                ++clean;
                clean_hit += hit;
            } else {
                ++noisy;
                noisy_hit += hit;
            }
        }
        MemPoint pt;
        pt.iter = snap.iter;
        pt.clean_acc = clean ? static_cast<double>(clean_hit) / static_cast<double>(clean) : 0.0;
        if (noisy) pt.noisy_acc = static_cast<double>(noisy_hit) / static_cast<double>(noisy);
        curve.push_back(pt);
    }
    return curve;
}

std::size_t first_reaching(const std::vector<double>& curve, double fraction) {
    if (curve.empty()) throw std::invalid_argument("first_reaching: empty curve");
    const double target = fraction * curve.back();
    for (std::size_t i = 0; i < curve.size(); ++i)
        if (curve[i] >= target) return i;
    return curve.size() - 1;
}

double max_rel_deviation(const Vec& a, const Vec& b, double floor) {
    if (a.size() != b.size()) throw std::invalid_argument("max_rel_deviation: length mismatch");
    double worst = 0.0;
    for (Index i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

Eq5Result eq5_verify(const Trace& trace, const ModelParams& f0, const ModelParams& m0, double m) {
    if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("eq5_verify: momentum must lie in [0, 1]");
    if (!(f0.shape() == m0.shape()) || !(f0.shape() == trace.layout)) {
        throw std::invalid_argument("eq5_verify: parameter layout does not match trace layout");
    }
    const auto n = static_cast<long>(trace.steps.size());
    if (n != trace.total_iterations) {
        throw std::invalid_argument("eq5_verify: incomplete trace (" + std::to_string(n) + " of " +
                                    std::to_string(trace.total_iterations) + " records)");
    }
    for (long k = 1; k <= n; ++k) {
        if (trace.steps[static_cast<std::size_t>(k - 1)].k != k) {
            throw std::invalid_argument("eq5_verify: incomplete trace, record " + std::to_string(k) + " is missing");
        }
    }

    // (a) replay the recurrence
    Vec f = f0.values();
    Vec mm = m0.values();
    for (const TraceRecord& r : trace.steps) {
        mm = lincomb(mm, f, m, 1.0 - m) + r.delta_m;
        f += r.delta_f;
    }

    // (b) closed form in the initial parameters and the deltas
    const double mn = std::pow(m, static_cast<double>(n));
    Vec closed = lincomb(m0.values(), f0.values(), mn, 1.0 - mn);
    for (long k = 1; k <= n; ++k) {
        const TraceRecord& r = trace.steps[static_cast<std::size_t>(k - 1)];
        const double w = std::pow(m, static_cast<double>(n - k));
        closed += w * r.delta_m + (1.0 - w) * r.delta_f;
    }

    Eq5Result res;
    res.max_rel_deviation = max_rel_deviation(mm, closed);
    res.replay_m = ModelParams(trace.layout, std::move(mm));
    res.closed_m = ModelParams(trace.layout, std::move(closed));
    res.replay_f = ModelParams(trace.layout, std::move(f));
    return res;
}

CostModel cost_model(long batch, double noise_rate) {
    if (batch < 1) throw std::invalid_argument("cost_model: batch size must be at least 1");
    if (!(noise_rate >= 0.0 && noise_rate < 1.0)) throw std::invalid_argument("cost_model: noise rate must lie in [0, 1)");
    const auto n = static_cast<double>(batch);
    return {2.0 * n * (2.0 - noise_rate), 2.0 * n, n};
}

std::uint64_t coteach_forwards(long batch, double noise_rate) {
    const auto n = static_cast<double>(batch);
    const auto keep = std::clamp<long>(static_cast<long>(std::ceil((1.0 - noise_rate) * n - 1e-9)), 1, batch);
    return static_cast<std::uint64_t>(2 * batch + 2 * keep);
}

void write_eval_csv(std::ostream& os, const EvalReport& r, std::uint64_t config_hash) {
    os << "condition";
    for (int v = 0; v < r.n_views; ++v) os << ",view" << v;
    os << ",Mean\n";
    for (std::size_t c = 0; c < r.conditions.size(); ++c) {
        os << to_string(r.conditions[c]);
        for (const auto& cell : r.cells[c]) os << ',' << (cell ? fixed4(*cell) : "");
        os << ',' << fixed4(r.condition_mean[c]) << '\n';
    }
    os << "# config_hash," << hex64(config_hash) << '\n';
}

void write_eval_json(std::ostream& os, const EvalReport& r, std::uint64_t config_hash) {
    nlohmann::json rows = nlohmann::json::object();
    for (std::size_t c = 0; c < r.conditions.size(); ++c) {
        nlohmann::json cells = nlohmann::json::array();
        for (const auto& cell : r.cells[c]) cells.push_back(cell ? nlohmann::json(*cell) : nlohmann::json());
        rows[to_string(r.conditions[c])] = {{"views", std::move(cells)}, {"mean", r.condition_mean[c]}};
    }
    nlohmann::json j{{"config_hash", hex64(config_hash)},
                     {"exclude_same_view", r.exclude_same_view},
                     {"gallery_size", r.gallery_size},
                     {"probe_size", r.probe_size},
                     {"n_views", r.n_views},
                     {"conditions", std::move(rows)},
                     {"overall_mean", r.overall_mean}};
    os << j.dump(2) << '\n';
}

void write_variance_csv(std::ostream& os, const VarianceStats& v, std::uint64_t config_hash) {
    os << "statistic,value\n";
    os << "intra_class," << fixed4(v.intra_class) << '\n';
    os << "intra_class_nm_bg," << fixed4(v.intra_class_nm_bg) << '\n';
    os << "intra_class_cl," << fixed4(v.intra_class_cl) << '\n';
    os << "total," << fixed4(v.total) << '\n';
    os << "# config_hash," << hex64(config_hash) << '\n';
}

void write_memcurve_csv(std::ostream& os, const MemCurve& c, std::uint64_t config_hash) {
    os << "iter,clean_acc,noisy_acc\n";
    for (const MemPoint& p : c) os << p.iter << ',' << fixed4(p.clean_acc) << ',' << (p.noisy_acc ? fixed4(*p.noisy_acc) : "") << '\n';
    os << "# config_hash," << hex64(config_hash) << '\n';
}

}  // namespace cntn
