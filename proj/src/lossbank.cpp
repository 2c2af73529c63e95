#include "cntn/lossbank.hpp"

#include <algorithm>
#include <limits>

namespace cntn {

CoteachLoss coteach_loss(const Vec& p_m, const Vec& p_f, bool detach_teacher) {
    if (p_m.size() != p_f.size()) throw std::invalid_argument("coteach_loss: logit dimension mismatch");
    if (p_m.size() < 2) throw std::invalid_argument("coteach_loss: need at least two classes");
    const Vec q = softmax(p_m);
    const Vec log_s = log_softmax(p_f);
    CoteachLoss out;
    out.loss = -q.dot(log_s);
    out.grad_f = log_s.array().exp().matrix() - q;
    if (detach_teacher) {
        out.grad_m = Vec::Zero(p_m.size());
    } else {
        // dL/dq = -log_s pushed through the softmax Jacobian
        const Vec g = -log_s;
        out.grad_m = (q.array() * (g.array() - q.dot(g))).matrix();
    }
    return out;
}

CeLoss ce_loss(const Vec& p, Index label) {
    if (label < 0 || label >= p.size()) {
        throw std::invalid_argument("ce_loss: label " + std::to_string(label) + " outside [0, " +
                                    std::to_string(p.size()) + ")");
    }
    const Vec log_s = log_softmax(p);
    CeLoss out;
    out.loss = -log_s[label];
    out.grad = log_s.array().exp().matrix();
    out.grad[label] -= 1.0;
    return out;
}

bool has_valid_triplet(std::span<const int> labels) {
    bool pair = false;
    bool two_classes = false;
    for (std::size_t i = 0; i < labels.size() && !(pair && two_classes); ++i) {
        for (std::size_t j = i + 1; j < labels.size(); ++j) {
            if (labels[i] == labels[j]) pair = true;
            else two_classes = true;
        }
    }
    return pair && two_classes;
}

BatchLoss triplet_loss(const Mat& embeddings, std::span<const int> labels, double margin) {
    const Index n = embeddings.cols();
    if (static_cast<std::size_t>(n) != labels.size()) throw std::invalid_argument("triplet_loss: label count mismatch");
    if (!has_valid_triplet(labels)) {
        throw StructuralError("triplet_loss: batch has no (anchor, positive, negative) triple");
    }
    Mat dist(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) dist(i, j) = (embeddings.col(i) - embeddings.col(j)).norm();

    // unit direction from b to a; zero when the points coincide
    auto unit = [&](Index a, Index b) -> Vec {
        const double d = dist(a, b);
        if (d <= 0.0) return Vec::Zero(embeddings.rows());
        return (embeddings.col(a) - embeddings.col(b)) / d;
    };

    BatchLoss out;
    out.grads = Mat::Zero(embeddings.rows(), n);
    double total = 0.0;
    long active = 0;
    for (Index a = 0; a < n; ++a) {
        for (Index p = 0; p < n; ++p) {
            if (p == a || labels[a] != labels[p]) continue;
            const Vec u_ap = unit(a, p);
            for (Index q = 0; q < n; ++q) {
                if (labels[q] == labels[a]) continue;
                const double hinge = dist(a, p) - dist(a, q) + margin;
                if (hinge <= 0.0) continue;
                total += hinge;
                ++active;
                const Vec u_an = unit(a, q);
                out.grads.col(a) += u_ap - u_an;
                out.grads.col(p) -= u_ap;
                out.grads.col(q) += u_an;
            }
        }
    }
    if (active > 0) {
        out.loss = total / static_cast<double>(active);
        out.grads /= static_cast<double>(active);
    }
    return out;
}

MilQueryLoss mil_loss(const Vec& q, const Mat& positives, const Mat& negatives, double temperature) {
    if (positives.cols() == 0) throw StructuralError("mil_loss: query has no positive key");
    if (!(temperature > 0.0)) throw std::invalid_argument("mil_loss: temperature must be positive");
    if (positives.rows() != q.size() || (negatives.cols() > 0 && negatives.rows() != q.size())) {
        throw std::invalid_argument("mil_loss: key dimension mismatch");
    }
    const Vec s_pos = positives.transpose() * q / temperature;
    const Vec s_neg = negatives.cols() > 0 ? Vec(negatives.transpose() * q / temperature) : Vec();
    double peak = s_pos.maxCoeff();
    if (s_neg.size() > 0) peak = std::max(peak, s_neg.maxCoeff());
    const Vec e_pos = (s_pos.array() - peak).exp().matrix();
    const Vec e_neg = (s_neg.array() - peak).exp().matrix();
    const double a = e_pos.sum();
    const double all = a + e_neg.sum();

    MilQueryLoss out;
    out.loss = std::log(all) - std::log(a);
    const Vec d_pos = (e_pos / all - e_pos / a);  // dL/ds for positives
    const Vec d_neg = e_neg / all;
    out.grad_q = (positives * d_pos) / temperature;
    if (negatives.cols() > 0) out.grad_q += (negatives * d_neg) / temperature;
    out.grad_pos = q * d_pos.transpose() / temperature;
    out.grad_neg = negatives.cols() > 0 ? Mat(q * d_neg.transpose() / temperature) : Mat(q.size(), 0);
    return out;
}

BatchLoss mil_batch_loss(const Mat& embeddings, std::span<const int> labels, double temperature) {
    const Index n = embeddings.cols();
    if (static_cast<std::size_t>(n) != labels.size()) throw std::invalid_argument("mil_batch_loss: label count mismatch");
    const Index d = embeddings.rows();

    Vec norms(n);
    Mat unit(d, n);
    for (Index i = 0; i < n; ++i) {
        norms[i] = std::max(embeddings.col(i).norm(), 1e-12);
        unit.col(i) = embeddings.col(i) / norms[i];
    }

    BatchLoss out;
    Mat g_unit = Mat::Zero(d, n);
    long queries = 0;
    std::vector<Index> pos;
    std::vector<Index> neg;
    for (Index i = 0; i < n; ++i) {
        pos.clear();
        neg.clear();
        for (Index j = 0; j < n; ++j) {
            if (j == i) continue;
            (labels[j] == labels[i] ? pos : neg).push_back(j);
        }
        if (pos.empty()) continue;
        Mat kp(d, static_cast<Index>(pos.size()));
        Mat kn(d, static_cast<Index>(neg.size()));
        for (std::size_t k = 0; k < pos.size(); ++k) kp.col(static_cast<Index>(k)) = unit.col(pos[k]);
        for (std::size_t k = 0; k < neg.size(); ++k) kn.col(static_cast<Index>(k)) = unit.col(neg[k]);
        const MilQueryLoss q = mil_loss(unit.col(i), kp, kn, temperature);
        out.loss += q.loss;
        g_unit.col(i) += q.grad_q;
        for (std::size_t k = 0; k < pos.size(); ++k) g_unit.col(pos[k]) += q.grad_pos.col(static_cast<Index>(k));
        for (std::size_t k = 0; k < neg.size(); ++k) g_unit.col(neg[k]) += q.grad_neg.col(static_cast<Index>(k));
        ++queries;
    }
    out.grads = Mat::Zero(d, n);
    if (queries == 0) return out;
    out.loss /= static_cast<double>(queries);
    g_unit /= static_cast<double>(queries);
    for (Index i = 0; i < n; ++i) {
        const Vec u = unit.col(i);
        const Vec g = g_unit.col(i);
        out.grads.col(i) = (g - u * u.dot(g)) / norms[i];
    }
    return out;
}

double Ramp::at(long iter) const {
    if (length <= 0 || iter >= length) return end;
    if (iter <= 0) return start;
    return start + (end - start) * static_cast<double>(iter) / static_cast<double>(length);
}

std::array<double, 4> CoeffSchedule::at(long iter) const {
    return {sigma[0].at(iter), sigma[1].at(iter), sigma[2].at(iter), sigma[3].at(iter)};
}

CoeffSchedule CoeffSchedule::clean_default() { return CoeffSchedule{}; }

CoeffSchedule CoeffSchedule::noisy_default(long total_iterations) {
    const long half = std::max(1L, total_iterations / 2);
    CoeffSchedule s;
    s.sigma = {Ramp{0.01, 0.1, half}, Ramp{1.0, 0.1, half}, Ramp{0.01, 0.1, half}, Ramp{0.01, 0.1, half}};
    return s;
}

LossBreakdown crc_combine(const LossParts& parts, const std::array<double, 4>& sigma) {
    LossBreakdown b;
    b.l_c = parts.l_c;
    b.l_ce = parts.l_ce;
    b.l_tri = parts.l_tri;
    b.l_mil = parts.l_mil;
    b.sigma = sigma;
    b.l_crc = sigma[0] * parts.l_c + sigma[1] * parts.l_ce + sigma[2] * parts.l_tri + sigma[3] * parts.l_mil;
    return b;
}

LossBreakdown crc_combine(const LossParts& parts, const CoeffSchedule& schedule, long iter) {
    return crc_combine(parts, schedule.at(iter));
}

}  // namespace cntn
