#include "cntn/cyclic.hpp"

#include "cntn/binio.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>

namespace cntn {

namespace {

enum : std::uint64_t {
    kStreamInitF = 1,
    kStreamInitM = 2,
    kStreamSampler = 3,
    kStreamAugF = 4,
    kStreamAugM = 5,
};

constexpr std::array<char, 8> kTraceMagic{'C', 'N', 'T', 'N', 'T', 'R', 'C', 'E'};

std::vector<Mat> augmented_views(const Dataset& data, const Batch& batch, AugmentSpec spec, RngStream rng) {
    std::vector<Mat> views;
    views.reserve(batch.size());
    for (std::size_t idx : batch.indices) views.push_back(sample_augmentation(spec, rng).apply(data.samples[idx].frames));
    return views;
}

std::vector<Mat> pick(const std::vector<Mat>& views, const std::vector<std::size_t>& which) {
    std::vector<Mat> out;
    out.reserve(which.size());
    for (std::size_t i : which) out.push_back(views[i]);
    return out;
}

std::string batch_diagnostic(const Dataset& data, const Batch& batch, long k, const LossBreakdown& b,
                             const BatchActivations& acts) {
    nlohmann::json j;
    j["iteration"] = k;
    j["losses"] = {{"l_c", b.l_c}, {"l_ce", b.l_ce}, {"l_tri", b.l_tri}, {"l_mil", b.l_mil}, {"l_crc", b.l_crc}};
    j["sigma"] = b.sigma;
    nlohmann::json samples = nlohmann::json::array();
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const SequenceSample& s = data.samples[batch.indices[i]];
        const NetOutputs& o = acts.outputs(i);
        samples.push_back({{"index", batch.indices[i]},
                           {"label", batch.labels[i]},
                           {"clean_id", s.clean_identity},
                           {"frames", s.frames.cols()},
                           {"input_finite", s.frames.allFinite()},
                           {"z_norm", o.z.norm()},
                           {"logit_max", o.p.maxCoeff()},
                           {"logit_min", o.p.minCoeff()}});
    }
    j["samples"] = std::move(samples);
    return j.dump(2);
}

bool finite(const LossBreakdown& b) {
    return std::isfinite(b.l_c) && std::isfinite(b.l_ce) && std::isfinite(b.l_tri) && std::isfinite(b.l_mil) &&
           std::isfinite(b.l_crc);
}

/// Effective coefficients after switching off the loss terms a mode does not use.
std::array<double, 4> active_sigma(const TrainerConfig& cfg, long it) {
    auto sigma = cfg.schedule.at(it);
    if (!cfg.uses_consistency()) sigma[0] = 0.0;
    if (!cfg.uses_supervised()) sigma[1] = sigma[2] = 0.0;
    if (!cfg.uses_mil()) sigma[3] = 0.0;
    return sigma;
}

struct SupervisedTerms {
    double l_ce = 0.0;
    double l_tri = 0.0;
    double l_mil = 0.0;
};

/// CE, triplet and MIL over the `kept` subset only; gradients land in dp / dz.
SupervisedTerms supervised_terms(const BatchActivations& acts, const std::vector<int>& labels,
                                 const std::vector<std::size_t>& kept, const std::array<double, 4>& sigma,
                                 const TrainerConfig& cfg, bool with_mil, std::vector<Vec>& dp, std::vector<Vec>& dz) {
    SupervisedTerms t;
    if (kept.empty()) return t;
    const double inv = 1.0 / static_cast<double>(kept.size());
    std::vector<int> sub_labels;
    Mat z(acts.shape.d_emb, static_cast<Index>(kept.size()));
    for (std::size_t j = 0; j < kept.size(); ++j) {
        const std::size_t i = kept[j];
        const CeLoss ce = ce_loss(acts.outputs(i).p, labels[i]);
        t.l_ce += ce.loss * inv;
        if (sigma[1] != 0.0) dp[i] += (sigma[1] * inv) * ce.grad;
        sub_labels.push_back(labels[i]);
        z.col(static_cast<Index>(j)) = acts.outputs(i).z;
    }
    if (has_valid_triplet(sub_labels)) {
        const BatchLoss tri = triplet_loss(z, sub_labels, cfg.margin);
        t.l_tri = tri.loss;
        if (sigma[2] != 0.0)
            for (std::size_t j = 0; j < kept.size(); ++j) dz[kept[j]] += sigma[2] * tri.grads.col(static_cast<Index>(j));
    }
    if (with_mil) {
        const BatchLoss mil = mil_batch_loss(z, sub_labels, cfg.temperature);
        t.l_mil = mil.loss;
        if (sigma[3] != 0.0)
            for (std::size_t j = 0; j < kept.size(); ++j) dz[kept[j]] += sigma[3] * mil.grads.col(static_cast<Index>(j));
    }
    return t;
}

void check_batch(const Batch& batch, const TrainState& st) {
    if (batch.size() == 0) throw std::invalid_argument("train_iteration: empty batch");
    if (batch.labels.size() != batch.indices.size()) throw std::invalid_argument("train_iteration: label/index mismatch");
    for (int y : batch.labels) {
        if (y < 0 || y >= st.f.shape().n_classes) throw std::invalid_argument("train_iteration: label outside model classes");
    }
}

std::uint64_t record_checksum(const TraceRecord& rec) {
    const auto k = static_cast<std::uint64_t>(rec.k);
    std::uint64_t h = fnv1a(&k, sizeof k);
    h = fnv1a(rec.delta_f.data(), static_cast<std::size_t>(rec.delta_f.size()) * sizeof(double), h);
    return fnv1a(rec.delta_m.data(), static_cast<std::size_t>(rec.delta_m.size()) * sizeof(double), h);
}

}  // namespace

std::string to_string(TrainMode m) {
    switch (m) {
        case TrainMode::Cntn: return "cntn";
        case TrainMode::Supervised: return "supervised";
        case TrainMode::SelfSup: return "selfsup";
        case TrainMode::CoteachBaseline: return "coteach-baseline";
    }
    return "?";
}

TrainMode parse_train_mode(const std::string& s) {
    if (s == "cntn") return TrainMode::Cntn;
    if (s == "supervised") return TrainMode::Supervised;
    if (s == "selfsup") return TrainMode::SelfSup;
    if (s == "coteach-baseline") return TrainMode::CoteachBaseline;
    throw std::invalid_argument("unknown training mode '" + s + "'");
}

void TrainerConfig::validate() const {
    if (P < 2 || K < 2) throw std::invalid_argument("trainer: P and K must both be at least 2");
    if (!(momentum >= 0.0 && momentum <= 1.0)) throw std::invalid_argument("trainer: momentum must lie in [0, 1]");
    if (iterations < 0) throw std::invalid_argument("trainer: negative iteration count");
    if (!(coteach_noise_rate >= 0.0 && coteach_noise_rate < 1.0)) {
        throw std::invalid_argument("trainer: coteach noise rate must lie in [0, 1)");
    }
    if (!(temperature > 0.0)) throw std::invalid_argument("trainer: temperature must be positive");
    if (!(sieve_beta > 0.0 && sieve_beta < 1.0)) throw std::invalid_argument("trainer: sieve beta must lie in (0, 1)");
    if (d_hidden < 1 || d_emb < 1) throw std::invalid_argument("trainer: layer sizes must be positive");
}

PxKSampler::PxKSampler(const Dataset& data) {
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < data.samples.size(); ++i) groups[data.samples[i].identity].push_back(i);
    by_id_.assign(groups.begin(), groups.end());
}

Batch PxKSampler::draw(int P, int K, RngStream& rng) const {
    if (P < 1 || K < 1) throw std::invalid_argument("pxk_sampler: P and K must be positive");
    if (by_id_.size() < static_cast<std::size_t>(P)) {
        throw std::invalid_argument("pxk_sampler: " + std::to_string(by_id_.size()) + " identities available, batch needs " +
                                    std::to_string(P));
    }
    std::vector<std::size_t> ids(by_id_.size());
    std::iota(ids.begin(), ids.end(), 0);
    for (int i = 0; i < P; ++i) {
        const auto j = static_cast<std::size_t>(i) + static_cast<std::size_t>(rng.below(ids.size() - static_cast<std::size_t>(i)));
        std::swap(ids[static_cast<std::size_t>(i)], ids[j]);
    }
    Batch b;
    for (int i = 0; i < P; ++i) {
        const auto& [label, members] = by_id_[ids[static_cast<std::size_t>(i)]];
        std::vector<std::size_t> pool = members;
        if (pool.size() >= static_cast<std::size_t>(K)) {
            for (int k = 0; k < K; ++k) {
                const auto j = static_cast<std::size_t>(k) + static_cast<std::size_t>(rng.below(pool.size() - static_cast<std::size_t>(k)));
                std::swap(pool[static_cast<std::size_t>(k)], pool[j]);
                b.indices.push_back(pool[static_cast<std::size_t>(k)]);
                b.labels.push_back(label);
            }
        } else {
            for (int k = 0; k < K; ++k) {
                b.indices.push_back(pool[static_cast<std::size_t>(rng.below(pool.size()))]);
                b.labels.push_back(label);
            }
        }
    }
    return b;
}

Batch pxk_sampler(const Dataset& data, int P, int K, RngStream& rng) { return PxKSampler(data).draw(P, K, rng); }

NetShape model_shape(const TrainerConfig& cfg, const Dataset& data) {
    NetShape s;
    s.d_in = data.d_in;
    s.d_hidden = cfg.d_hidden;
    s.d_emb = cfg.d_emb;
    s.n_classes = data.n_ids;
    return s;
}

TrainState init_train_state(const TrainerConfig& cfg, const NetShape& shape) {
    TrainState st;
    st.f = init_params(shape, RngStream(cfg.seed, kStreamInitF));
    st.opt_f = make_optimizer(cfg.optimizer, shape);
    if (cfg.has_second_network()) {
        st.m = init_params(shape, RngStream(cfg.seed, kStreamInitM));
        st.opt_m = make_optimizer(cfg.optimizer, shape);
    }
    st.sieve.beta = cfg.sieve_beta;
    st.sieve.warmup = cfg.sieve_warmup;
    return st;
}

IterationResult train_iteration(const Dataset& data, const Batch& batch, TrainState st, const TrainerConfig& cfg) {
    check_batch(batch, st);
    const long it = st.iter;
    const std::size_t n = batch.size();
    const NetShape shape = st.f.shape();
    const bool second = st.m.has_value();
    if (cfg.uses_consistency() && !second) throw std::invalid_argument("train_iteration: mode needs a second network");

    IterationResult out;
    TraceRecord& rec = out.record;
    rec.k = it + 1;

    // (1) F hands its weights to M before anything else happens
    if (second) {
        rec.pre_ema_m_hash = fingerprint(st.m->values());
        if (cfg.ema_active()) st.m = ema_transfer(*st.m, st.f, cfg.momentum);
    }

    // (2)-(3) independent views per network, then forward
    const std::vector<Mat> view_f = augmented_views(data, batch, cfg.augment, RngStream(cfg.seed, kStreamAugF).substream(it));
    const BatchActivations acts_f = forward_batch(st.f, view_f);
    out.forwards += n;
    std::optional<BatchActivations> acts_m;
    if (second) {
        const std::vector<Mat> view_m =
            augmented_views(data, batch, cfg.augment, RngStream(cfg.seed, kStreamAugM).substream(it));
        acts_m = forward_batch(*st.m, view_m);
        out.forwards += n;
    }

    const auto sigma = active_sigma(cfg, it);
    std::vector<Vec> dp_f(n, Vec::Zero(shape.n_classes));
    std::vector<Vec> dz_f(n, Vec::Zero(shape.d_emb));
    std::vector<Vec> dp_m(n, Vec::Zero(shape.n_classes));
    LossParts parts;

    // (4) consistency: M's prediction is F's soft target
    if (cfg.uses_consistency()) {
        const double w = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const CoteachLoss c = coteach_loss(acts_m->outputs(i).p, acts_f.outputs(i).p, cfg.detach_teacher);
            parts.l_c += c.loss * w;
            dp_f[i] += (sigma[0] * w) * c.grad_f;
            dp_m[i] += (sigma[0] * w) * c.grad_m;
        }
    }

    // (5) supervised terms on F, restricted to the samples the sieve keeps
    Mask mask(n, 1);
    MaskStats& ms = rec.mask;
    ms.batch = n;
    if (cfg.mask_active() && second) {
        std::vector<NetOutputs> of;
        std::vector<NetOutputs> om;
        for (std::size_t i = 0; i < n; ++i) {
            of.push_back(acts_f.outputs(i));
            om.push_back(acts_m->outputs(i));
        }
        const auto scores = score_batch(of, om, batch.labels);
        MaskResult mr = adapt_mask(scores, st.sieve);
        mask = std::move(mr.mask);
        st.sieve = mr.state;
        for (const NoiseScore& s : scores) {
            ms.mean_entropy += s.entropy / static_cast<double>(n);
            ms.mean_ce += s.ce / static_cast<double>(n);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        const SequenceSample& s = data.samples[batch.indices[i]];
        const bool noisy = batch.labels[i] != s.clean_identity;
        ms.kept += mask[i];
        ms.noisy += noisy;
        ms.masked_noisy += noisy && !mask[i];
    }
    if (cfg.uses_supervised()) {
        const SupervisedTerms t = supervised_terms(acts_f, batch.labels, kept_indices(mask), sigma, cfg, cfg.uses_mil(), dp_f, dz_f);
        parts.l_ce = t.l_ce;
        parts.l_tri = t.l_tri;
        parts.l_mil = t.l_mil;
    }

    // (6) weighted combination
    out.losses = crc_combine(parts, sigma);
    rec.losses = out.losses;
    if (!finite(out.losses)) {
        throw NonFiniteLoss("non-finite loss at iteration " + std::to_string(rec.k),
                            batch_diagnostic(data, batch, rec.k, out.losses, acts_f));
    }

    // (7) F takes the full gradient, M only the consistency gradient
    out.lr = learning_rate_at(st.opt_f.config, it);
    const GradVector grad_f = backward(st.f, acts_f, dz_f, dp_f);
    StepResult step_f = optimizer_step(st.f, grad_f, std::move(st.opt_f), it);
    st.f = std::move(step_f.params);
    st.opt_f = std::move(step_f.state);
    rec.delta_f = std::move(step_f.delta);

    if (second && cfg.uses_consistency()) {
        const GradVector grad_m = backward(*st.m, *acts_m, {}, dp_m);
        StepResult step_m = optimizer_step(*st.m, grad_m, std::move(*st.opt_m), it);
        st.m = std::move(step_m.params);
        st.opt_m = std::move(step_m.state);
        rec.delta_m = std::move(step_m.delta);
    } else {
        rec.delta_m = Vec::Zero(shape.param_count());
    }

    st.iter = it + 1;
    st.forward_count += out.forwards;
    out.state = std::move(st);
    return out;
}

IterationResult coteach_baseline_iteration(const Dataset& data, const Batch& batch, TrainState st,
                                           const TrainerConfig& cfg) {
    check_batch(batch, st);
    if (!st.m) throw std::invalid_argument("coteach_baseline_iteration: needs two networks");
    const double rate = cfg.coteach_noise_rate;
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("coteach_baseline_iteration: noise rate must lie in [0, 1)");
    const long it = st.iter;
    const std::size_t n = batch.size();
    const NetShape shape = st.f.shape();

    IterationResult out;
    TraceRecord& rec = out.record;
    rec.k = it + 1;
    rec.pre_ema_m_hash = fingerprint(st.m->values());

    const std::vector<Mat> view_a = augmented_views(data, batch, cfg.augment, RngStream(cfg.seed, kStreamAugF).substream(it));
    const std::vector<Mat> view_b = augmented_views(data, batch, cfg.augment, RngStream(cfg.seed, kStreamAugM).substream(it));
    const BatchActivations rank_a = forward_batch(st.f, view_a);
    const BatchActivations rank_b = forward_batch(*st.m, view_b);
    out.forwards += 2 * n;

    const auto keep = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::ceil((1.0 - rate) * static_cast<double>(n) - 1e-9)), 1, n);
    auto small_loss = [&](const BatchActivations& acts) {
        std::vector<double> ce(n);
        for (std::size_t i = 0; i < n; ++i) ce[i] = ce_loss(acts.outputs(i).p, batch.labels[i]).loss;
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return ce[x] < ce[y]; });
        order.resize(keep);
        std::sort(order.begin(), order.end());
        return order;
    };
    const std::vector<std::size_t> picked_by_a = small_loss(rank_a);
    const std::vector<std::size_t> picked_by_b = small_loss(rank_b);

    // the baseline trains on CE and triplet only
    auto sigma = cfg.schedule.at(it);
    sigma[0] = sigma[3] = 0.0;
    auto train_on = [&](const ModelParams& params, OptimizerState opt, const std::vector<Mat>& views,
                        const std::vector<std::size_t>& subset, SupervisedTerms& terms) {
        std::vector<int> labels;
        for (std::size_t i : subset) labels.push_back(batch.labels[i]);
        const BatchActivations acts = forward_batch(params, pick(views, subset));
        out.forwards += subset.size();
        std::vector<std::size_t> all(subset.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        std::vector<Vec> dp(subset.size(), Vec::Zero(shape.n_classes));
        std::vector<Vec> dz(subset.size(), Vec::Zero(shape.d_emb));
        terms = supervised_terms(acts, labels, all, sigma, cfg, false, dp, dz);
        return optimizer_step(params, backward(params, acts, dz, dp), std::move(opt), it);
    };

    SupervisedTerms ta;
    SupervisedTerms tb;
    StepResult step_a = train_on(st.f, std::move(st.opt_f), view_a, picked_by_b, ta);
    StepResult step_b = train_on(*st.m, std::move(*st.opt_m), view_b, picked_by_a, tb);

    LossParts parts;
    parts.l_ce = ta.l_ce;
    parts.l_tri = ta.l_tri;
    out.losses = crc_combine(parts, sigma);
    rec.losses = out.losses;
    if (!finite(out.losses) || !std::isfinite(tb.l_ce) || !std::isfinite(tb.l_tri)) {
        throw NonFiniteLoss("non-finite loss at iteration " + std::to_string(rec.k),
                            batch_diagnostic(data, batch, rec.k, out.losses, rank_a));
    }
    rec.mask.batch = n;
    rec.mask.kept = keep;
    for (std::size_t i = 0; i < n; ++i) {
        const bool noisy = batch.labels[i] != data.samples[batch.indices[i]].clean_identity;
        rec.mask.noisy += noisy;
        rec.mask.masked_noisy +=
            noisy && !std::binary_search(picked_by_b.begin(), picked_by_b.end(), i);
    }

    out.lr = learning_rate_at(step_a.state.config, it);
    st.f = std::move(step_a.params);
    st.opt_f = std::move(step_a.state);
    rec.delta_f = std::move(step_a.delta);
    st.m = std::move(step_b.params);
    st.opt_m = std::move(step_b.state);
    rec.delta_m = std::move(step_b.delta);

    st.iter = it + 1;
    st.forward_count += out.forwards;
    out.state = std::move(st);
    return out;
}

TrainResult run_training(const Dataset& data, const TrainerConfig& cfg, const RunOptions& opts) {
    cfg.validate();
    if (data.samples.empty()) throw std::invalid_argument("run_training: empty dataset");
    const PxKSampler sampler(data);
    if (sampler.eligible_identities() < static_cast<std::size_t>(cfg.P)) {
        throw std::invalid_argument("run_training: dataset has " + std::to_string(sampler.eligible_identities()) +
                                    " identities, batch shape needs " + std::to_string(cfg.P));
    }
    const NetShape shape = model_shape(cfg, data);
    TrainState st = init_train_state(cfg, shape);

    TrainResult res;
    res.f_init = st.f;
    res.m_init = st.m;
    if (cfg.record_trace && opts.keep_trace) {
        res.trace = Trace{shape, cfg.momentum, cfg.iterations, 0, {}};
        res.trace->steps.reserve(static_cast<std::size_t>(cfg.iterations));
    }
    if (opts.snapshot_every > 0) res.snapshots.push_back({0, st.f});

    const RngStream sampler_root(cfg.seed, kStreamSampler);
    for (long it = 0; it < cfg.iterations; ++it) {
        RngStream rng = sampler_root.substream(static_cast<std::uint64_t>(it));
        const Batch batch = sampler.draw(cfg.P, cfg.K, rng);
        IterationResult ir = cfg.mode == TrainMode::CoteachBaseline
                                 ? coteach_baseline_iteration(data, batch, std::move(st), cfg)
                                 : train_iteration(data, batch, std::move(st), cfg);
        st = std::move(ir.state);

        MetricsRow row{ir.record.k, ir.losses, ir.record.mask, ir.lr};
        if (opts.on_metrics) opts.on_metrics(row);
        res.metrics.push_back(row);
        if (cfg.record_trace) {
            if (opts.on_trace) opts.on_trace(ir.record);
            if (res.trace) res.trace->steps.push_back(std::move(ir.record));
        }
        if (opts.snapshot_every > 0 && (it + 1) % opts.snapshot_every == 0) res.snapshots.push_back({it + 1, st.f});
    }
    res.f = std::move(st.f);
    res.m = std::move(st.m);
    res.forward_count = st.forward_count;
    return res;
}

TraceWriter::TraceWriter(const std::filesystem::path& path, const NetShape& layout, double momentum,
                         long total_iterations, std::uint64_t config_hash)
    : os_(path, std::ios::binary | std::ios::trunc), path_(path), params_(layout.param_count()) {
    if (!os_) throw std::runtime_error("cannot open trace for writing: " + path.string());
    os_.write(kTraceMagic.data(), kTraceMagic.size());
    binio::put_u32(os_, kTraceVersion);
    binio::put_u32(os_, 0);
    for (Index v : {layout.d_in, layout.d_hidden, layout.d_emb, layout.n_classes, layout.param_count()})
        binio::put_u64(os_, static_cast<std::uint64_t>(v));
    binio::put_f64(os_, momentum);
    binio::put_u64(os_, static_cast<std::uint64_t>(total_iterations));
    binio::put_u64(os_, config_hash);
}

void TraceWriter::append(const TraceRecord& rec) {
    if (rec.delta_f.size() != params_ || rec.delta_m.size() != params_) {
        throw std::invalid_argument("TraceWriter: record layout does not match header");
    }
    binio::put_u64(os_, static_cast<std::uint64_t>(rec.k));
    binio::put_u64(os_, rec.pre_ema_m_hash);
    binio::put_u64(os_, record_checksum(rec));
    binio::put_f64s(os_, rec.delta_f.data(), static_cast<std::size_t>(params_));
    binio::put_f64s(os_, rec.delta_m.data(), static_cast<std::size_t>(params_));
    if (!os_) throw std::runtime_error("failed writing trace: " + path_.string());
}

void TraceWriter::close() {
    os_.flush();
    if (!os_) throw std::runtime_error("failed writing trace: " + path_.string());
    os_.close();
}

void write_trace(const std::filesystem::path& path, const Trace& trace) {
    TraceWriter w(path, trace.layout, trace.momentum, trace.total_iterations, trace.config_hash);
    for (const TraceRecord& r : trace.steps) w.append(r);
    w.close();
}

Trace read_trace(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open trace: " + path.string());
    const std::string what = "trace " + path.string();
    std::array<char, 8> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kTraceMagic) throw std::runtime_error("bad magic in " + what);
    if (binio::get_u32(is, what) != kTraceVersion) throw std::runtime_error("unsupported version in " + what);
    binio::get_u32(is, what);
    Trace t;
    t.layout.d_in = static_cast<Index>(binio::get_u64(is, what));
    t.layout.d_hidden = static_cast<Index>(binio::get_u64(is, what));
    t.layout.d_emb = static_cast<Index>(binio::get_u64(is, what));
    t.layout.n_classes = static_cast<Index>(binio::get_u64(is, what));
    const auto count = binio::get_u64(is, what);
    if (count != static_cast<std::uint64_t>(t.layout.param_count())) throw std::runtime_error("layout mismatch in " + what);
    t.momentum = binio::get_f64(is, what);
    t.total_iterations = static_cast<long>(binio::get_u64(is, what));
    t.config_hash = binio::get_u64(is, what);

    const Index p = t.layout.param_count();
    while (is.peek() != std::char_traits<char>::eof()) {
        TraceRecord r;
        r.k = static_cast<long>(binio::get_u64(is, what));
        r.pre_ema_m_hash = binio::get_u64(is, what);
        const std::uint64_t checksum = binio::get_u64(is, what);
        r.delta_f.resize(p);
        r.delta_m.resize(p);
        binio::get_f64s(is, r.delta_f.data(), static_cast<std::size_t>(p), what + " record " + std::to_string(r.k));
        binio::get_f64s(is, r.delta_m.data(), static_cast<std::size_t>(p), what + " record " + std::to_string(r.k));
        if (record_checksum(r) != checksum) {
            const long k = t.steps.empty() ? r.k : t.steps.back().k + 1;
            throw TraceCorruption(k, "checksum mismatch in " + what + " at iteration " + std::to_string(k));
        }
        t.steps.push_back(std::move(r));
    }
    return t;
}

}  // namespace cntn
