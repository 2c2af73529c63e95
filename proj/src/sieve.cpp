#include "cntn/sieve.hpp"

#include "cntn/lossbank.hpp"

#include <algorithm>
#include <numeric>

namespace cntn {

std::vector<NoiseScore> score_batch(std::span<const NetOutputs> outputs_f, std::span<const NetOutputs> outputs_m,
                                    std::span<const int> labels) {
    if (outputs_f.size() != outputs_m.size() || outputs_f.size() != labels.size()) {
        throw std::invalid_argument("score_batch: length mismatch");
    }
    std::vector<NoiseScore> scores(outputs_f.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const Vec& pf = outputs_f[i].p;
        const Vec& pm = outputs_m[i].p;
        NoiseScore& s = scores[i];
        s.index = i;
        s.entropy = entropy(softmax(pm));
        s.ce = ce_loss(pf, labels[i]).loss;
        s.agree = !argmax_is_tied(pf) && !argmax_is_tied(pm) && argmax(pf) == argmax(pm);
    }
    return scores;
}

MaskResult adapt_mask(std::span<const NoiseScore> scores, SieveState state) {
    if (scores.empty()) throw std::invalid_argument("adapt_mask: empty batch");
    // means taken relative to the minimum: exact for a batch of identical scores
    double h_lo = scores.front().entropy;
    double ce_lo = scores.front().ce;
    for (const NoiseScore& s : scores) {
        h_lo = std::min(h_lo, s.entropy);
        ce_lo = std::min(ce_lo, s.ce);
    }
    double batch_entropy = 0.0;
    double batch_ce = 0.0;
    for (const NoiseScore& s : scores) {
        batch_entropy += s.entropy - h_lo;
        batch_ce += s.ce - ce_lo;
    }
    batch_entropy = h_lo + batch_entropy / static_cast<double>(scores.size());
    batch_ce = ce_lo + batch_ce / static_cast<double>(scores.size());

    MaskResult out;
    out.mask.assign(scores.size(), 1);
    if (state.iter >= state.warmup) {
        const double h_thr = state.primed ? state.mean_entropy : batch_entropy;
        const double ce_thr = state.primed ? state.mean_ce : batch_ce;
        std::size_t best = 0;
        bool any = false;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            const NoiseScore& s = scores[i];
            const bool keep = s.entropy <= h_thr && s.ce <= ce_thr && s.agree;
            out.mask[i] = keep ? 1 : 0;
            any = any || keep;
            if (s.ce < scores[best].ce) best = i;
        }
        if (!any) out.mask[best] = 1;
    }

    if (state.primed) {
        state.mean_entropy = state.beta * state.mean_entropy + (1.0 - state.beta) * batch_entropy;
        state.mean_ce = state.beta * state.mean_ce + (1.0 - state.beta) * batch_ce;
    } else {
        state.mean_entropy = batch_entropy;
        state.mean_ce = batch_ce;
        state.primed = true;
    }
    ++state.iter;
    out.state = state;
    return out;
}

Mat apply_mask(const Mask& mask, const Mat& per_sample_grads) {
    if (static_cast<Index>(mask.size()) != per_sample_grads.cols()) {
        throw std::invalid_argument("apply_mask: mask length does not match batch size");
    }
    Mat out = per_sample_grads;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (!mask[i]) out.col(static_cast<Index>(i)).setZero();
    return out;
}

std::vector<std::size_t> kept_indices(const Mask& mask) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) idx.push_back(i);
    return idx;
}

double kept_fraction(const Mask& mask) {
    if (mask.empty()) return 0.0;
    const auto kept = std::count(mask.begin(), mask.end(), std::uint8_t{1});
    return static_cast<double>(kept) / static_cast<double>(mask.size());
}

}  // namespace cntn
