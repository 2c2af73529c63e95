// Dense numeric primitives and counter-based randomness shared by every module.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace cntn {

using Index = Eigen::Index;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Sampler or batch structure violated a loss precondition.
class StructuralError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// An API was called with state that did not come from the matching producer.
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
    return x.allFinite();
}

/// Max-shifted softmax. Throws on empty input.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax(const Eigen::MatrixBase<Derived>& logits) {
    using Scalar = typename Derived::Scalar;
    if (logits.size() == 0) throw std::invalid_argument("softmax: empty logits");
    const Scalar peak = logits.maxCoeff();
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> e = (logits.array() - peak).exp().matrix();
    return e / e.sum();
}

/// log softmax, stable for large margins where softmax underflows.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> log_softmax(const Eigen::MatrixBase<Derived>& logits) {
    using Scalar = typename Derived::Scalar;
    if (logits.size() == 0) throw std::invalid_argument("log_softmax: empty logits");
    const Scalar peak = logits.maxCoeff();
    const Scalar lse = peak + std::log((logits.array() - peak).exp().sum());
    return (logits.array() - lse).matrix();
}

/// Shannon entropy in nats with 0 ln 0 := 0.
template <typename Derived>
typename Derived::Scalar entropy(const Eigen::MatrixBase<Derived>& p) {
    using Scalar = typename Derived::Scalar;
    if (p.size() == 0) throw std::invalid_argument("entropy: empty distribution");
    if ((p.array() < Scalar(0)).any()) throw std::invalid_argument("entropy: negative probability");
    if (std::abs(p.sum() - Scalar(1)) > Scalar(1e-9)) throw std::invalid_argument("entropy: probabilities do not sum to 1");
    Scalar h = 0;
    for (Index i = 0; i < p.size(); ++i) {
        if (p[i] > Scalar(0)) h -= p[i] * std::log(p[i]);
    }
    return h < Scalar(0) ? Scalar(0) : h;
}

/// wa * a + wb * b, elementwise.
template <typename DerivedA, typename DerivedB>
Eigen::Matrix<typename DerivedA::Scalar, Eigen::Dynamic, 1> lincomb(const Eigen::MatrixBase<DerivedA>& a,
                                                                      const Eigen::MatrixBase<DerivedB>& b,
                                                                      typename DerivedA::Scalar wa,
                                                                      typename DerivedA::Scalar wb) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("lincomb: length mismatch (" + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()) + ")");
    }
    return (wa * a.array() + wb * b.array()).matrix();
}

/// Index of the first maximal entry.
template <typename Derived>
Index argmax(const Eigen::MatrixBase<Derived>& v) {
    Index best = 0;
    v.maxCoeff(&best);
    return best;
}

/// True when the maximum is attained by more than one entry.
template <typename Derived>
bool argmax_is_tied(const Eigen::MatrixBase<Derived>& v) {
    const auto peak = v.maxCoeff();
    return (v.array() == peak).count() > 1;
}

std::uint64_t splitmix64(std::uint64_t x);

/// FNV-1a over raw bytes; used for parameter fingerprints and config hashes.
std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
/// 16 lowercase hex digits.
std::string hex64(std::uint64_t v);
std::uint64_t fingerprint(const Vec& v);

/// Counter-based random stream. Draw i of stream (seed, stream) is a pure
/// function of (seed, stream, i); a stream value only advances its own cursor.
class RngStream {
public:
    RngStream() = default;
    RngStream(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }
    std::uint64_t position() const { return counter_; }

    /// Addressable draw, independent of the cursor.
    std::uint64_t at(std::uint64_t index) const;

    std::uint64_t next_u64() { return at(counter_++); }
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    /// Standard normal via Box-Muller (consumes two draws).
    double normal();
    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n);

    /// Child stream keyed by id; children of distinct ids are independent.
    RngStream substream(std::uint64_t id) const;

private:
    std::uint64_t seed_ = 0;
    std::uint64_t stream_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace cntn
