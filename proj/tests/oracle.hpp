// Reference computations and random generators for the test suites. Nothing
// here calls into the library's numerics: long double, naive loops.
#pragma once

#include "cntn/setnet.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace oracle {

using LD = long double;
using cntn::Index;
using cntn::Mat;
using cntn::Vec;

inline std::vector<LD> softmax(const std::vector<LD>& x) {
    LD hi = x[0];
    for (LD v : x) hi = std::max(hi, v);
    LD sum = 0;
    std::vector<LD> e;
    for (LD v : x) {
        e.push_back(std::exp(v - hi));
        sum += e.back();
    }
    for (LD& v : e) v /= sum;
    return e;
}

inline std::vector<LD> to_ld(const Vec& v) { return {v.data(), v.data() + v.size()}; }

inline LD entropy(const std::vector<LD>& p) {
    LD h = 0;
    for (LD v : p)
        if (v > 0) h -= v * std::log(v);
    return h;
}

inline LD cross_entropy(const std::vector<LD>& target, const std::vector<LD>& logits) {
    const auto q = softmax(logits);
    LD s = 0;
    for (std::size_t i = 0; i < q.size(); ++i) s -= target[i] * std::log(q[i]);
    return s;
}

inline LD coteach(const Vec& p_m, const Vec& p_f) { return cross_entropy(softmax(to_ld(p_m)), to_ld(p_f)); }

inline LD ce(const Vec& p, Index y) { return -std::log(softmax(to_ld(p))[static_cast<std::size_t>(y)]); }

inline LD dist(const Mat& e, Index a, Index b) {
    LD s = 0;
    for (Index r = 0; r < e.rows(); ++r) {
        const LD d = static_cast<LD>(e(r, a)) - static_cast<LD>(e(r, b));
        s += d * d;
    }
    return std::sqrt(s);
}

/// Batch-all triplet: mean over the strictly positive hinges, enumerated.
inline LD triplet(const Mat& e, std::span<const int> y, double margin) {
    LD sum = 0;
    long active = 0;
    for (Index a = 0; a < e.cols(); ++a)
        for (Index p = 0; p < e.cols(); ++p) {
            if (p == a || y[static_cast<std::size_t>(p)] != y[static_cast<std::size_t>(a)]) continue;
            for (Index n = 0; n < e.cols(); ++n) {
                if (y[static_cast<std::size_t>(n)] == y[static_cast<std::size_t>(a)]) continue;
                const LD h = dist(e, a, p) - dist(e, a, n) + margin;
                if (h > 0) {
                    sum += h;
                    ++active;
                }
            }
        }
    return active ? sum / active : 0;
}

inline LD mil_from_sims(const std::vector<LD>& pos, const std::vector<LD>& neg, LD tau) {
    LD num = 0;
    LD den = 0;
    for (LD s : pos) num += std::exp(s / tau);
    den = num;
    for (LD s : neg) den += std::exp(s / tau);
    return -std::log(num / den);
}

/// Batch MIL on L2-normalized columns: each sample with a same-label partner
/// queries every other sample; mean over those queries.
inline LD mil_batch(const Mat& e, std::span<const int> y, double tau) {
    Mat u = e;
    for (Index c = 0; c < u.cols(); ++c) {
        LD n = 0;
        for (Index r = 0; r < u.rows(); ++r) n += static_cast<LD>(u(r, c)) * u(r, c);
        u.col(c) /= static_cast<double>(std::sqrt(n));
    }
    LD sum = 0;
    long queries = 0;
    for (Index q = 0; q < u.cols(); ++q) {
        std::vector<LD> pos;
        std::vector<LD> neg;
        for (Index k = 0; k < u.cols(); ++k) {
            if (k == q) continue;
            LD s = 0;
            for (Index r = 0; r < u.rows(); ++r) s += static_cast<LD>(u(r, q)) * u(r, k);
            (y[static_cast<std::size_t>(k)] == y[static_cast<std::size_t>(q)] ? pos : neg).push_back(s);
        }
        if (pos.empty()) continue;
        sum += mil_from_sims(pos, neg, tau);
        ++queries;
    }
    return queries ? sum / queries : 0;
}

/// Set encoder written out with explicit loops over the flat parameter layout.
struct Outputs {
    std::vector<LD> z;
    std::vector<LD> p;
};

inline Outputs forward(const Mat& x, const cntn::ModelParams& params) {
    const cntn::NetShape s = params.shape();
    const double* w = params.values().data();
    const Index o_b1 = s.d_hidden * s.d_in;
    const Index o_w2 = o_b1 + s.d_hidden;
    const Index o_b2 = o_w2 + s.d_emb * 2 * s.d_hidden;
    const Index o_w3 = o_b2 + s.d_emb;
    const Index o_b3 = o_w3 + s.n_classes * s.d_emb;
    std::vector<LD> mx(static_cast<std::size_t>(s.d_hidden), -INFINITY);
    std::vector<LD> mean(static_cast<std::size_t>(s.d_hidden), 0);
    for (Index t = 0; t < x.cols(); ++t)
        for (Index h = 0; h < s.d_hidden; ++h) {
            LD a = w[o_b1 + h];
            for (Index i = 0; i < s.d_in; ++i) a += static_cast<LD>(w[h + i * s.d_hidden]) * x(i, t);
            a = std::max<LD>(a, 0);
            mx[static_cast<std::size_t>(h)] = std::max(mx[static_cast<std::size_t>(h)], a);
            mean[static_cast<std::size_t>(h)] += a / static_cast<LD>(x.cols());
        }
    std::vector<LD> pooled = mx;
    pooled.insert(pooled.end(), mean.begin(), mean.end());
    Outputs o;
    for (Index e = 0; e < s.d_emb; ++e) {
        LD a = w[o_b2 + e];
        for (Index j = 0; j < 2 * s.d_hidden; ++j) a += static_cast<LD>(w[o_w2 + e + j * s.d_emb]) * pooled[static_cast<std::size_t>(j)];
        o.z.push_back(a);
    }
    for (Index c = 0; c < s.n_classes; ++c) {
        LD a = w[o_b3 + c];
        for (Index e = 0; e < s.d_emb; ++e) a += static_cast<LD>(w[o_w3 + c + e * s.n_classes]) * o.z[static_cast<std::size_t>(e)];
        o.p.push_back(a);
    }
    return o;
}

/// Closed form of M after N EMA-coupled steps, accumulated as an explicit
/// sum: m^N m0 + sum_k m^{N-k} [(1-m) f_{k-1} + dm_k].
inline std::vector<LD> closed_form_m(const Vec& f0, const Vec& m0, const std::vector<Vec>& df, const std::vector<Vec>& dm,
                                     LD m) {
    const std::size_t n = df.size();
    const auto p = static_cast<std::size_t>(f0.size());
    std::vector<LD> out(p);
    std::vector<LD> f(f0.data(), f0.data() + p);
    for (std::size_t i = 0; i < p; ++i) out[i] = std::pow(m, static_cast<LD>(n)) * m0[static_cast<Index>(i)];
    for (std::size_t k = 1; k <= n; ++k) {
        const LD w = std::pow(m, static_cast<LD>(n - k));
        for (std::size_t i = 0; i < p; ++i) {
            out[i] += w * ((1 - m) * f[i] + dm[k - 1][static_cast<Index>(i)]);
            f[i] += df[k - 1][static_cast<Index>(i)];
        }
    }
    return out;
}

/// Trace of the biased covariance matrix, computed as a matrix.
inline LD covariance_trace(const Mat& x) {
    const Index d = x.rows();
    const Index n = x.cols();
    std::vector<LD> mu(static_cast<std::size_t>(d), 0);
    for (Index c = 0; c < n; ++c)
        for (Index r = 0; r < d; ++r) mu[static_cast<std::size_t>(r)] += static_cast<LD>(x(r, c)) / n;
    std::vector<std::vector<LD>> cov(static_cast<std::size_t>(d), std::vector<LD>(static_cast<std::size_t>(d), 0));
    for (Index c = 0; c < n; ++c)
        for (Index i = 0; i < d; ++i)
            for (Index j = 0; j < d; ++j)
                cov[i][j] += (x(i, c) - mu[i]) * (x(j, c) - mu[j]) / n;
    LD tr = 0;
    for (Index i = 0; i < d; ++i) tr += cov[i][i];
    return tr;
}

/// Relative error, treated as 0 when the absolute difference is within `floor`.
inline double rel_err(double a, double b, double floor = 1e-8) {
    const double diff = std::abs(a - b);
    if (diff <= floor) return 0.0;
    return diff / std::max(std::abs(a), std::abs(b));
}

/// Hand-rolled generators for property tests.
class Gen {
public:
    explicit Gen(std::uint64_t seed) : eng_(seed) {}

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
    double normal(double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(eng_); }
    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(eng_); }

    Vec vec(Index n, double lo = -3.0, double hi = 3.0) {
        Vec v(n);
        for (Index i = 0; i < n; ++i) v[i] = uniform(lo, hi);
        return v;
    }
    Mat mat(Index r, Index c, double sd = 1.0) {
        Mat m(r, c);
        for (Index j = 0; j < c; ++j)
            for (Index i = 0; i < r; ++i) m(i, j) = normal(sd);
        return m;
    }
    std::vector<Index> permutation(Index n) {
        std::vector<Index> p(static_cast<std::size_t>(n));
        for (Index i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
        std::shuffle(p.begin(), p.end(), eng_);
        return p;
    }
    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
};

inline cntn::ModelParams random_params(const cntn::NetShape& s, Gen& g, double sd = 0.3) {
    cntn::ModelParams p(s);
    for (Index i = 0; i < p.size(); ++i) p.values()[i] = g.normal(sd);
    return p;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("cntn_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace oracle
