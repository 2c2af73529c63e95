// Central finite differences of batch losses composed with the set encoder.
#pragma once

#include "cntn/lossbank.hpp"
#include "oracle.hpp"

#include <functional>
#include <string>

namespace fd {

using namespace cntn;

struct LossEval {
    double loss = 0.0;
    std::vector<Vec> dz;  // empty when the loss ignores z
    std::vector<Vec> dp;  // empty when the loss ignores p
};

using BatchLossFn = std::function<LossEval(const std::vector<NetOutputs>&)>;

struct Problem {
    ModelParams params;
    std::vector<Mat> frames;
    std::vector<int> labels;
};

/// 3 identities x 3 sequences of 5-9 frames, random parameters.
inline Problem random_problem(oracle::Gen& g, NetShape shape = {6, 10, 5, 3}) {
    Problem p{oracle::random_params(shape, g), {}, {}};
    for (int id = 0; id < 3; ++id)
        for (int k = 0; k < 3; ++k) {
            p.frames.push_back(g.mat(shape.d_in, g.integer(5, 9)));
            p.labels.push_back(id);
        }
    return p;
}

inline std::vector<NetOutputs> outputs_of(const ModelParams& params, const std::vector<Mat>& frames) {
    std::vector<NetOutputs> out;
    for (const Mat& f : frames) out.push_back(forward(f, params));
    return out;
}

inline Mat z_matrix(const std::vector<NetOutputs>& o) {
    Mat z(o.front().z.size(), static_cast<Index>(o.size()));
    for (std::size_t i = 0; i < o.size(); ++i) z.col(static_cast<Index>(i)) = o[i].z;
    return z;
}

inline std::vector<Vec> columns(const Mat& m) {
    std::vector<Vec> v;
    for (Index c = 0; c < m.cols(); ++c) v.push_back(m.col(c));
    return v;
}

struct Report {
    int checked = 0;
    double worst = 0.0;
    Index worst_index = -1;
    double worst_raw = 0.0;  // relative error without the absolute floor
    double max_abs = 0.0;
};

/// Compares backward() against central differences on `count` random
/// parameter coordinates; differences within 1e-8 absolute count as exact.
inline Report check(const Problem& prob, const BatchLossFn& loss, int count, oracle::Gen& g, double step = 1e-5) {
    const BatchActivations acts = forward_batch(prob.params, prob.frames);
    std::vector<NetOutputs> outs;
    for (std::size_t i = 0; i < acts.size(); ++i) outs.push_back(acts.outputs(i));
    const LossEval at = loss(outs);
    const GradVector grad = backward(prob.params, acts, at.dz, at.dp);

    Report r;
    for (int t = 0; t < count; ++t) {
        const Index j = g.integer(0, static_cast<int>(prob.params.size()) - 1);
        ModelParams plus = prob.params;
        ModelParams minus = prob.params;
        plus.values()[j] += step;
        minus.values()[j] -= step;
        const double numeric =
            (loss(outputs_of(plus, prob.frames)).loss - loss(outputs_of(minus, prob.frames)).loss) / (2.0 * step);
        const double e = oracle::rel_err(grad.values()[j], numeric);
        r.worst_raw = std::max(r.worst_raw, oracle::rel_err(grad.values()[j], numeric, 0.0));
        r.max_abs = std::max(r.max_abs, std::abs(grad.values()[j] - numeric));
        ++r.checked;
        if (e > r.worst) {
            r.worst = e;
            r.worst_index = j;
        }
    }
    return r;
}

inline LossEval ce_batch(const std::vector<NetOutputs>& o, const std::vector<int>& y) {
    LossEval e;
    const double w = 1.0 / static_cast<double>(o.size());
    for (std::size_t i = 0; i < o.size(); ++i) {
        const CeLoss c = ce_loss(o[i].p, y[i]);
        e.loss += w * c.loss;
        e.dp.push_back(w * c.grad);
    }
    return e;
}

/// Consistency loss with the other network's logits held fixed; `student`
/// picks whether the differentiated network plays F or M.
inline LossEval coteach_batch(const std::vector<NetOutputs>& o, const std::vector<Vec>& other, bool student) {
    LossEval e;
    const double w = 1.0 / static_cast<double>(o.size());
    for (std::size_t i = 0; i < o.size(); ++i) {
        const CoteachLoss c = student ? coteach_loss(other[i], o[i].p) : coteach_loss(o[i].p, other[i]);
        e.loss += w * c.loss;
        e.dp.push_back(w * (student ? c.grad_f : c.grad_m));
    }
    return e;
}

inline LossEval triplet_batch(const std::vector<NetOutputs>& o, const std::vector<int>& y, double margin) {
    const BatchLoss b = triplet_loss(z_matrix(o), y, margin);
    return {b.loss, columns(b.grads), {}};
}

inline LossEval mil_batch(const std::vector<NetOutputs>& o, const std::vector<int>& y, double tau) {
    const BatchLoss b = mil_batch_loss(z_matrix(o), y, tau);
    return {b.loss, columns(b.grads), {}};
}

struct NamedLoss {
    std::string name;
    BatchLossFn fn;
};

/// Every loss of the bank, plus their weighted combination, bound to a problem.
inline std::vector<NamedLoss> all_losses(const Problem& prob, const std::vector<Vec>& teacher_logits) {
    const auto y = prob.labels;
    const auto t = teacher_logits;
    std::vector<NamedLoss> out{
        {"consistency (student side)", [t](const auto& o) { return coteach_batch(o, t, true); }},
        {"consistency (teacher side)", [t](const auto& o) { return coteach_batch(o, t, false); }},
        {"cross-entropy", [y](const auto& o) { return ce_batch(o, y); }},
        {"triplet", [y](const auto& o) { return triplet_batch(o, y, 0.2); }},
        {"mil", [y](const auto& o) { return mil_batch(o, y, 0.5); }},
    };
    out.push_back({"crc", [y, t](const auto& o) {
                       const std::array<double, 4> s{0.3, 1.0, 0.7, 0.5};
                       const LossEval parts[] = {coteach_batch(o, t, true), ce_batch(o, y), triplet_batch(o, y, 0.2),
                                                 mil_batch(o, y, 0.5)};
                       const LossBreakdown b =
                           crc_combine({parts[0].loss, parts[1].loss, parts[2].loss, parts[3].loss}, s);
                       LossEval e;
                       e.loss = b.l_crc;
                       e.dp.assign(o.size(), Vec::Zero(o.front().p.size()));
                       e.dz.assign(o.size(), Vec::Zero(o.front().z.size()));
                       for (std::size_t i = 0; i < o.size(); ++i) {
                           e.dp[i] = s[0] * parts[0].dp[i] + s[1] * parts[1].dp[i];
                           e.dz[i] = s[2] * parts[2].dz[i] + s[3] * parts[3].dz[i];
                       }
                       return e;
                   }});
    return out;
}

}  // namespace fd
