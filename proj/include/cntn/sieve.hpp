// Adaptive noise detection: per-sample noisiness scores and a mask that keeps
// probable noisy labels out of the supervised gradient.
#pragma once

#include "cntn/setnet.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace cntn {

struct NoiseScore {
    std::size_t index = 0;
    double entropy = 0.0;  // of the memorizing network's prediction, nats
    double ce = 0.0;       // forgetting network's CE against the given label
    bool agree = false;    // unique argmax of both networks coincides
};

/// Entropy comes from M, CE from F. A tied argmax on either side counts as
/// disagreement.
std::vector<NoiseScore> score_batch(std::span<const NetOutputs> outputs_f, std::span<const NetOutputs> outputs_m,
                                    std::span<const int> labels);

struct SieveState {
    double mean_entropy = 0.0;
    double mean_ce = 0.0;
    double beta = 0.9;
    long warmup = 200;
    long iter = 0;
    bool primed = false;  // running means hold at least one batch
};

using Mask = std::vector<std::uint8_t>;

struct MaskResult {
    Mask mask;
    SieveState state;
};

/// Keeps a sample iff entropy <= running entropy mean, CE <= running CE mean
/// and the networks agree; everything is kept during warmup. Running means
/// then absorb the batch means as beta * old + (1 - beta) * batch. The
/// minimum-CE sample is always kept.
MaskResult adapt_mask(std::span<const NoiseScore> scores, SieveState state);

/// Zeroes the columns of masked-out samples.
Mat apply_mask(const Mask& mask, const Mat& per_sample_grads);

std::vector<std::size_t> kept_indices(const Mask& mask);
double kept_fraction(const Mask& mask);

}  // namespace cntn
