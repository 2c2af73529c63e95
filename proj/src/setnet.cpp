#include "cntn/setnet.hpp"

#include "cntn/binio.hpp"

#include <algorithm>
#include <array>
#include <fstream>

namespace cntn {

namespace {

void fill_uniform(Eigen::Map<Mat> block, double bound, RngStream& rng) {
    for (Index j = 0; j < block.cols(); ++j)
        for (Index i = 0; i < block.rows(); ++i) block(i, j) = (2.0 * rng.uniform() - 1.0) * bound;
}

void fill_uniform(Eigen::Map<Vec> block, double bound, RngStream& rng) {
    for (Index i = 0; i < block.size(); ++i) block[i] = (2.0 * rng.uniform() - 1.0) * bound;
}

void check_frames(const Mat& frames, const NetShape& shape) {
    if (frames.cols() == 0) throw std::invalid_argument("forward: empty frame set");
    if (frames.rows() != shape.d_in) {
        throw std::invalid_argument("forward: frame dimension " + std::to_string(frames.rows()) + ", model expects " +
                                    std::to_string(shape.d_in));
    }
}

SampleActivations run_forward(const Mat& frames, const ModelParams& params) {
    const NetShape& s = params.shape();
    check_frames(frames, s);
    SampleActivations a;
    a.input = frames;
    a.hidden = ((params.w1() * frames).colwise() + params.b1()).cwiseMax(0.0);
    a.max_frame.resize(s.d_hidden);
    a.pooled.resize(s.pooled());
    for (Index h = 0; h < s.d_hidden; ++h) {
        Index best = 0;
        a.pooled[h] = a.hidden.row(h).maxCoeff(&best);
        a.max_frame[h] = static_cast<int>(best);
    }
    a.pooled.tail(s.d_hidden) = a.hidden.rowwise().mean();
    a.out.z = params.w2() * a.pooled + params.b2();
    a.out.p = params.w3() * a.out.z + params.b3();
    return a;
}

}  // namespace

ModelParams init_params(const NetShape& shape, RngStream rng) {
    ModelParams p(shape);
    const double b1 = 1.0 / std::sqrt(static_cast<double>(shape.d_in));
    const double b2 = 1.0 / std::sqrt(static_cast<double>(shape.pooled()));
    const double b3 = 1.0 / std::sqrt(static_cast<double>(shape.d_emb));
    fill_uniform(p.w1(), b1, rng);
    fill_uniform(p.b1(), b1, rng);
    fill_uniform(p.w2(), b2, rng);
    fill_uniform(p.b2(), b2, rng);
    fill_uniform(p.w3(), b3, rng);
    fill_uniform(p.b3(), b3, rng);
    return p;
}

NetOutputs forward(const Mat& frames, const ModelParams& params) { return run_forward(frames, params).out; }

BatchActivations forward_batch(const ModelParams& params, std::span<const Mat> frames) {
    BatchActivations acts;
    acts.shape = params.shape();
    acts.params_fingerprint = fingerprint(params.values());
    acts.samples.reserve(frames.size());
    for (const Mat& f : frames) acts.samples.push_back(run_forward(f, params));
    return acts;
}

GradVector backward(const ModelParams& params, const BatchActivations& acts, std::span<const Vec> dz,
                    std::span<const Vec> dp) {
    const NetShape& s = params.shape();
    if (!(acts.shape == s) || acts.params_fingerprint != fingerprint(params.values())) {
        throw ContractViolation("backward: activation cache was produced with different parameters");
    }
    const std::size_t n = acts.size();
    if ((!dz.empty() && dz.size() != n) || (!dp.empty() && dp.size() != n)) {
        throw ContractViolation("backward: upstream gradient count does not match cached batch");
    }

    GradVector g(s);
    auto gw1 = g.w1();
    auto gb1 = g.b1();
    auto gw2 = g.w2();
    auto gb2 = g.b2();
    auto gw3 = g.w3();
    auto gb3 = g.b3();

    Vec dz_total(s.d_emb);
    for (std::size_t i = 0; i < n; ++i) {
        const SampleActivations& a = acts.samples[i];
        dz_total.setZero();
        if (!dp.empty()) {
            gw3.noalias() += dp[i] * a.out.z.transpose();
            gb3 += dp[i];
            dz_total.noalias() += params.w3().transpose() * dp[i];
        }
        if (!dz.empty()) dz_total += dz[i];

        gw2.noalias() += dz_total * a.pooled.transpose();
        gb2 += dz_total;
        const Vec dpooled = params.w2().transpose() * dz_total;

        const Index frames = a.hidden.cols();
        Mat dh = (dpooled.tail(s.d_hidden) / static_cast<double>(frames)).replicate(1, frames);
        for (Index h = 0; h < s.d_hidden; ++h) dh(h, a.max_frame[h]) += dpooled[h];
        dh = (a.hidden.array() > 0.0).select(dh, 0.0);

        gw1.noalias() += dh * a.input.transpose();
        gb1 += dh.rowwise().sum();
    }
    return g;
}

ModelParams ema_transfer(const ModelParams& theta_m, const ModelParams& theta_f, double m) {
    if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("ema_transfer: momentum must lie in [0, 1]");
    if (!(theta_m.shape() == theta_f.shape())) throw std::invalid_argument("ema_transfer: layout mismatch");
    return ModelParams(theta_m.shape(), lincomb(theta_m.values(), theta_f.values(), m, 1.0 - m));
}

double learning_rate_at(const OptimizerConfig& cfg, long iter) {
    double lr = cfg.lr;
    for (long milestone : cfg.milestones)
        if (iter >= milestone) lr *= cfg.gamma;
    return lr;
}

OptimizerState make_optimizer(const OptimizerConfig& cfg, const NetShape& shape) {
    if (cfg.lr < 0.0) throw std::invalid_argument("optimizer: learning rate must be nonnegative");
    if (!(cfg.gamma > 0.0 && cfg.gamma <= 1.0)) throw std::invalid_argument("optimizer: decay factor must be in (0, 1]");
    OptimizerState st;
    st.config = cfg;
    st.first = Vec::Zero(shape.param_count());
    if (cfg.kind == OptimizerKind::Adam) st.second = Vec::Zero(shape.param_count());
    return st;
}

StepResult optimizer_step(const ModelParams& params, const GradVector& grad, OptimizerState state, long iter) {
    if (!(params.shape() == grad.shape())) throw std::invalid_argument("optimizer_step: layout mismatch");
    if (state.first.size() != params.size()) throw std::invalid_argument("optimizer_step: state layout mismatch");
    if (iter <= state.last_iter) throw std::invalid_argument("optimizer_step: iteration must increase");
    state.last_iter = iter;
    ++state.steps;

    const OptimizerConfig& c = state.config;
    const double lr = learning_rate_at(c, iter);
    const Vec& g = grad.values();
    Vec delta;
    if (c.kind == OptimizerKind::Sgd) {
        if (c.momentum == 0.0) {
            delta = -lr * g;
        } else {
            state.first = c.momentum * state.first + g;
            delta = -lr * state.first;
        }
    } else {
        state.first = c.beta1 * state.first + (1.0 - c.beta1) * g;
        state.second = c.beta2 * state.second + (1.0 - c.beta2) * g.cwiseAbs2();
        const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.steps));
        const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.steps));
        delta = (-lr * (state.first.array() / bc1) / ((state.second.array() / bc2).sqrt() + c.eps)).matrix();
    }
    ModelParams next(params.shape(), params.values() + delta);
    return {std::move(next), std::move(state), std::move(delta)};
}

namespace {
constexpr std::array<char, 8> kCkptMagic{'C', 'N', 'T', 'N', 'C', 'K', 'P', 'T'};
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, std::uint64_t config_hash) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
    const NetShape& s = params.shape();
    os.write(kCkptMagic.data(), kCkptMagic.size());
    binio::put_u32(os, kCheckpointVersion);
    binio::put_u32(os, 0);
    for (Index v : {s.d_in, s.d_hidden, s.d_emb, s.n_classes, s.param_count()})
        binio::put_u64(os, static_cast<std::uint64_t>(v));
    binio::put_u64(os, config_hash);
    binio::put_f64s(os, params.values().data(), static_cast<std::size_t>(params.size()));
    if (!os) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
    const std::string what = "checkpoint " + path.string();
    std::array<char, 8> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kCkptMagic) throw std::runtime_error("bad magic in " + what);
    if (binio::get_u32(is, what) != kCheckpointVersion) throw std::runtime_error("unsupported version in " + what);
    binio::get_u32(is, what);
    NetShape s;
    s.d_in = static_cast<Index>(binio::get_u64(is, what));
    s.d_hidden = static_cast<Index>(binio::get_u64(is, what));
    s.d_emb = static_cast<Index>(binio::get_u64(is, what));
    s.n_classes = static_cast<Index>(binio::get_u64(is, what));
    const auto count = binio::get_u64(is, what);
    if (count != static_cast<std::uint64_t>(s.param_count())) {
        throw std::runtime_error("header/length mismatch in " + what + ": shape implies " +
                                 std::to_string(s.param_count()) + " parameters, header says " + std::to_string(count));
    }
    Checkpoint ck;
    ck.config_hash = binio::get_u64(is, what);
    Vec values(s.param_count());
    binio::get_f64s(is, values.data(), static_cast<std::size_t>(values.size()), what);
    if (is.peek() != std::char_traits<char>::eof()) throw std::runtime_error("trailing bytes in " + what);
    if (!values.allFinite()) throw std::runtime_error("non-finite parameters in " + what);
    ck.params = ModelParams(s, std::move(values));
    return ck;
}

}  // namespace cntn
