// Scalar losses of the co-teaching robust constraint, with analytic gradients,
// and the coefficient schedules that weight them.
#pragma once

#include "cntn/numkit.hpp"

#include <array>
#include <span>
#include <vector>

namespace cntn {

/// Consistency loss -sum_c softmax(p_m)_c * ln softmax(p_f)_c, where p_m is the
/// memorizing (teacher) network's logits and p_f the forgetting network's.
struct CoteachLoss {
    double loss = 0.0;
    Vec grad_f;
    Vec grad_m;  // zero when the teacher is detached
};

CoteachLoss coteach_loss(const Vec& p_m, const Vec& p_f, bool detach_teacher = false);

struct CeLoss {
    double loss = 0.0;
    Vec grad;
};

CeLoss ce_loss(const Vec& p, Index label);

/// Embeddings are the columns of the matrix; `grads` has the same layout.
struct BatchLoss {
    double loss = 0.0;
    Mat grads;
};

/// True when the labels admit at least one (anchor, positive, negative) triple.
bool has_valid_triplet(std::span<const int> labels);

/// Batch-all triplet loss with Euclidean distances, averaged over the
/// triplets whose hinge is strictly positive (0 when none are).
/// Throws StructuralError when the batch admits no triplet at all.
BatchLoss triplet_loss(const Mat& embeddings, std::span<const int> labels, double margin);

struct MilQueryLoss {
    double loss = 0.0;
    Vec grad_q;
    Mat grad_pos;
    Mat grad_neg;
};

/// Multi-positive InfoNCE for one query against key columns:
/// -ln( sum_+ e^{q.k/tau} / (sum_+ e^{q.k/tau} + sum_- e^{q.k/tau}) ).
MilQueryLoss mil_loss(const Vec& q, const Mat& positives, const Mat& negatives, double temperature);

/// Batch MIL on raw embeddings: each column is L2-normalized, then every
/// sample that has at least one same-label partner acts as a query against
/// all other samples. The loss is the mean over those queries; gradients are
/// taken through the normalization back to the raw embeddings.
BatchLoss mil_batch_loss(const Mat& embeddings, std::span<const int> labels, double temperature);

/// Piecewise-linear ramp from `start` to `end` over `length` iterations, then flat.
struct Ramp {
    double start = 0.0;
    double end = 0.0;
    long length = 0;

    double at(long iter) const;
    static Ramp constant(double v) { return {v, v, 0}; }
    bool operator==(const Ramp&) const = default;
};

/// sigma0..sigma3 weight L_c, L_CE, L_tri, L_MIL respectively.
struct CoeffSchedule {
    std::array<Ramp, 4> sigma{Ramp::constant(0.1), Ramp::constant(1.0), Ramp::constant(0.1), Ramp::constant(0.1)};

    std::array<double, 4> at(long iter) const;

    /// Constant (0.1, 1.0, 0.1, 0.1).
    static CoeffSchedule clean_default();
    /// sigma0, sigma2 and sigma3 ramp 0.01 -> 0.1 and sigma1 decays 1.0 -> 0.1 over the first half.
    static CoeffSchedule noisy_default(long total_iterations);

    bool operator==(const CoeffSchedule&) const = default;
};

struct LossParts {
    double l_c = 0.0;
    double l_ce = 0.0;
    double l_tri = 0.0;
    double l_mil = 0.0;
};

struct LossBreakdown {
    double l_c = 0.0;
    double l_ce = 0.0;
    double l_tri = 0.0;
    double l_mil = 0.0;
    double l_crc = 0.0;
    std::array<double, 4> sigma{};
};

LossBreakdown crc_combine(const LossParts& parts, const std::array<double, 4>& sigma);
LossBreakdown crc_combine(const LossParts& parts, const CoeffSchedule& schedule, long iter);

}  // namespace cntn
