// Permutation-invariant set encoder with a linear classification head.
//
// A sequence is a d_in x T matrix, one frame per column. Each frame goes
// through an affine map and a rectifier, the frames are pooled with an
// elementwise max and mean (concatenated), then projected to the embedding z
// and classified into logits p.
#pragma once

#include "cntn/numkit.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace cntn {

struct NetShape {
    Index d_in = 16;
    Index d_hidden = 64;
    Index d_emb = 32;
    Index n_classes = 2;

    Index pooled() const { return 2 * d_hidden; }
    Index param_count() const {
        return d_hidden * d_in + d_hidden + d_emb * pooled() + d_emb + n_classes * d_emb + n_classes;
    }
    bool operator==(const NetShape&) const = default;
};

namespace detail {
struct ParamsTag {};
struct GradTag {};
}  // namespace detail

/// Flat parameter-shaped vector with named segment views.
///
/// Segments in order: frame map W1 (d_hidden x d_in) and b1, projection W2
/// (d_emb x 2 d_hidden) and b2, classifier W3 (n_classes x d_emb) and b3.
/// Matrices are stored column-major.
template <typename Tag>
class FlatParams {
public:
    FlatParams() = default;
    explicit FlatParams(const NetShape& shape) : shape_(shape), values_(Vec::Zero(shape.param_count())) {}
    FlatParams(const NetShape& shape, Vec values) : shape_(shape), values_(std::move(values)) {
        if (values_.size() != shape_.param_count()) {
            throw std::invalid_argument("FlatParams: length " + std::to_string(values_.size()) +
                                        " does not match shape (" + std::to_string(shape_.param_count()) + ")");
        }
    }

    const NetShape& shape() const { return shape_; }
    const Vec& values() const { return values_; }
    Vec& values() { return values_; }
    Index size() const { return values_.size(); }

    Eigen::Map<const Mat> w1() const { return cmat(0, shape_.d_hidden, shape_.d_in); }
    Eigen::Map<const Vec> b1() const { return cvec(off_b1(), shape_.d_hidden); }
    Eigen::Map<const Mat> w2() const { return cmat(off_w2(), shape_.d_emb, shape_.pooled()); }
    Eigen::Map<const Vec> b2() const { return cvec(off_b2(), shape_.d_emb); }
    Eigen::Map<const Mat> w3() const { return cmat(off_w3(), shape_.n_classes, shape_.d_emb); }
    Eigen::Map<const Vec> b3() const { return cvec(off_b3(), shape_.n_classes); }

    Eigen::Map<Mat> w1() { return mmat(0, shape_.d_hidden, shape_.d_in); }
    Eigen::Map<Vec> b1() { return mvec(off_b1(), shape_.d_hidden); }
    Eigen::Map<Mat> w2() { return mmat(off_w2(), shape_.d_emb, shape_.pooled()); }
    Eigen::Map<Vec> b2() { return mvec(off_b2(), shape_.d_emb); }
    Eigen::Map<Mat> w3() { return mmat(off_w3(), shape_.n_classes, shape_.d_emb); }
    Eigen::Map<Vec> b3() { return mvec(off_b3(), shape_.n_classes); }

    bool operator==(const FlatParams& o) const { return shape_ == o.shape_ && values_ == o.values_; }

private:
    Index off_b1() const { return shape_.d_hidden * shape_.d_in; }
    Index off_w2() const { return off_b1() + shape_.d_hidden; }
    Index off_b2() const { return off_w2() + shape_.d_emb * shape_.pooled(); }
    Index off_w3() const { return off_b2() + shape_.d_emb; }
    Index off_b3() const { return off_w3() + shape_.n_classes * shape_.d_emb; }

    Eigen::Map<const Mat> cmat(Index off, Index r, Index c) const { return {values_.data() + off, r, c}; }
    Eigen::Map<const Vec> cvec(Index off, Index n) const { return {values_.data() + off, n}; }
    Eigen::Map<Mat> mmat(Index off, Index r, Index c) { return {values_.data() + off, r, c}; }
    Eigen::Map<Vec> mvec(Index off, Index n) { return {values_.data() + off, n}; }

    NetShape shape_;
    Vec values_;
};

using ModelParams = FlatParams<detail::ParamsTag>;
using GradVector = FlatParams<detail::GradTag>;

struct NetOutputs {
    Vec z;  // embedding, d_emb
    Vec p;  // logits, n_classes
};

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer, weights and biases alike.
ModelParams init_params(const NetShape& shape, RngStream rng);

NetOutputs forward(const Mat& frames, const ModelParams& params);

/// Cached activations of one sample, enough to run the backward pass.
struct SampleActivations {
    Mat input;                 // d_in x T
    Mat hidden;                // d_hidden x T, after the rectifier
    Eigen::VectorXi max_frame; // frame index that won the max pool per hidden unit
    Vec pooled;                // [max; mean], 2 d_hidden
    NetOutputs out;
};

struct BatchActivations {
    NetShape shape;
    std::uint64_t params_fingerprint = 0;
    std::vector<SampleActivations> samples;

    std::size_t size() const { return samples.size(); }
    const NetOutputs& outputs(std::size_t i) const { return samples[i].out; }
};

BatchActivations forward_batch(const ModelParams& params, std::span<const Mat> frames);

/// Gradient of a scalar batch loss given dL/dz and dL/dp for every sample.
/// `params` must be the exact parameters the activations were produced with.
/// An empty span means the loss does not depend on that output.
GradVector backward(const ModelParams& params, const BatchActivations& acts, std::span<const Vec> dz,
                    std::span<const Vec> dp);

/// m * theta_m + (1 - m) * theta_f.
ModelParams ema_transfer(const ModelParams& theta_m, const ModelParams& theta_f, double m);

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Sgd;
    double lr = 0.1;
    double momentum = 0.9;  // SGD only; 0 gives the plain rule
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<long> milestones;
    double gamma = 0.1;

    bool operator==(const OptimizerConfig&) const = default;
};

/// Learning rate in effect at iteration `iter` (decayed once per milestone reached).
double learning_rate_at(const OptimizerConfig& cfg, long iter);

struct OptimizerState {
    OptimizerConfig config;
    Vec first;   // momentum buffer or first moment
    Vec second;  // second moment (Adam)
    long steps = 0;
    long last_iter = -1;
};

OptimizerState make_optimizer(const OptimizerConfig& cfg, const NetShape& shape);

struct StepResult {
    ModelParams params;
    OptimizerState state;
    Vec delta;  // params == old + delta, bitwise
};

StepResult optimizer_step(const ModelParams& params, const GradVector& grad, OptimizerState state, long iter);

// Checkpoint file: 8-byte magic, u32 version, u32 reserved, then u64 d_in,
// d_hidden, d_emb, n_classes, param_count, config_hash, followed by the flat
// parameter vector as little-endian doubles.
struct Checkpoint {
    ModelParams params;
    std::uint64_t config_hash = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, std::uint64_t config_hash);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cntn
