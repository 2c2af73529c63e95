#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "cntn/lossbank.hpp"
#include "oracle.hpp"

using namespace cntn;

namespace {

// Independent high-precision values (mpmath, 30 digits).
constexpr double kCoteachAsym = 1.04432026614822771;  // p_m = [1, 0], p_f = [0, 1]
constexpr double kMilCase = 0.680269670641734576;     // q.k+ = {1}, q.k- = {0, 0.5}, tau = 1
constexpr double kCeCase = 0.407605964444380;         // p = [1, 2, 3], y = 2

/// Unit query and keys with prescribed inner products: q = e0, key = s e0 + sqrt(1 - s^2) e1.
Mat keys_with_sims(const std::vector<double>& sims) {
    Mat k(2, static_cast<Index>(sims.size()));
    for (std::size_t i = 0; i < sims.size(); ++i) k.col(static_cast<Index>(i)) << sims[i], std::sqrt(1.0 - sims[i] * sims[i]);
    return k;
}

double numeric_derivative(const std::function<double(double)>& f, double x, double h = 1e-6) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace

TEST_CASE("coteach_loss values") {
    CHECK(coteach_loss(Vec{{0.0, 0.0}}, Vec{{0.0, 0.0}}).loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(std::abs(coteach_loss(Vec{{0.0, 0.0}}, Vec{{0.0, 0.0}}).loss - std::log(2.0)) < 1e-10);

    const double v = coteach_loss(Vec{{1.0, 0.0}}, Vec{{0.0, 1.0}}).loss;
    CHECK(std::abs(v - kCoteachAsym) < 1e-12);
    CHECK(std::abs(static_cast<double>(oracle::coteach(Vec{{1.0, 0.0}}, Vec{{0.0, 1.0}})) - kCoteachAsym) < 1e-15);
    CHECK(std::abs(v - 1.044324) < 1e-5);

    double prev = INFINITY;
    for (double margin : {0.0, 1.0, 3.0, 10.0, 30.0}) {
        const double l = coteach_loss(Vec{{margin, 0.0}}, Vec{{margin, 0.0}}).loss;
        CHECK(l < prev);
        prev = l;
    }
    CHECK(prev < 1e-11);

    CHECK_THROWS_AS(coteach_loss(Vec{{0.0, 0.0}}, Vec{{0.0, 0.0, 0.0}}), std::invalid_argument);
    CHECK_THROWS_AS(coteach_loss(Vec{{0.0}}, Vec{{0.0}}), std::invalid_argument);
}

TEST_CASE("coteach_loss detached teacher") {
    const CoteachLoss live = coteach_loss(Vec{{0.3, -1.0, 2.0}}, Vec{{1.0, 0.0, 0.5}});
    const CoteachLoss det = coteach_loss(Vec{{0.3, -1.0, 2.0}}, Vec{{1.0, 0.0, 0.5}}, true);
    CHECK(det.loss == live.loss);
    CHECK(det.grad_f == live.grad_f);
    CHECK(det.grad_m.isZero(0.0));
    CHECK_FALSE(live.grad_m.isZero(1e-6));
}

TEST_CASE("property: consistency loss against entropy") {
    oracle::Gen g(31);
    for (int trial = 0; trial < 500; ++trial) {
        const Index c = g.integer(2, 9);
        const Vec pm = g.vec(c, -6.0, 6.0);
        const Vec pf = g.vec(c, -6.0, 6.0);
        const double h = entropy(softmax(pm));
        CHECK(coteach_loss(pm, pm).loss == doctest::Approx(h).epsilon(1e-12));
        CHECK(coteach_loss(pm, pf).loss >= h - 1e-12);
        CHECK(coteach_loss(pm, pf).loss == doctest::Approx(static_cast<double>(oracle::coteach(pm, pf))).epsilon(1e-12));
    }
}

TEST_CASE("ce_loss values") {
    CHECK(ce_loss(Vec::Zero(4), 1).loss == doctest::Approx(std::log(4.0)).epsilon(1e-15));
    const CeLoss c = ce_loss(Vec{{1.0, 2.0, 3.0}}, 2);
    CHECK(std::abs(c.loss - kCeCase) < 1e-12);
    CHECK(std::abs(c.loss - 0.407606) < 1e-5);
    CHECK(ce_loss(Vec{{0.0, 50.0}}, 1).loss < 1e-20);
    CHECK(std::isfinite(ce_loss(Vec{{1000.0, -1000.0}}, 1).loss));
    CHECK_THROWS_AS(ce_loss(Vec::Zero(3), 3), std::invalid_argument);
    CHECK_THROWS_AS(ce_loss(Vec::Zero(3), -1), std::invalid_argument);
}

TEST_CASE("property: CE gradient sums to zero and matches differences") {
    oracle::Gen g(32);
    for (int trial = 0; trial < 200; ++trial) {
        const Index c = g.integer(2, 8);
        const Vec p = g.vec(c);
        const Index y = g.integer(0, static_cast<int>(c) - 1);
        const CeLoss l = ce_loss(p, y);
        CHECK(std::abs(l.grad.sum()) < 1e-14);
        CHECK(l.loss == doctest::Approx(static_cast<double>(oracle::ce(p, y))).epsilon(1e-12));
        for (Index i = 0; i < c; ++i) {
            const double num = numeric_derivative(
                [&](double x) {
                    Vec q = p;
                    q[i] = x;
                    return ce_loss(q, y).loss;
                },
                p[i]);
            CHECK(oracle::rel_err(l.grad[i], num) < 1e-6);
        }
    }
}

TEST_CASE("property: consistency gradients match differences on both sides") {
    oracle::Gen g(33);
    for (int trial = 0; trial < 100; ++trial) {
        const Index c = g.integer(2, 6);
        const Vec pm = g.vec(c);
        const Vec pf = g.vec(c);
        const CoteachLoss l = coteach_loss(pm, pf);
        for (Index i = 0; i < c; ++i) {
            const double nf = numeric_derivative(
                [&](double x) {
                    Vec q = pf;
                    q[i] = x;
                    return coteach_loss(pm, q).loss;
                },
                pf[i]);
            const double nm = numeric_derivative(
                [&](double x) {
                    Vec q = pm;
                    q[i] = x;
                    return coteach_loss(q, pf).loss;
                },
                pm[i]);
            CHECK(oracle::rel_err(l.grad_f[i], nf) < 1e-6);
            CHECK(oracle::rel_err(l.grad_m[i], nm) < 1e-6);
        }
    }
}

TEST_CASE("triplet_loss cases") {
    const std::vector<int> y{0, 0, 1, 1};
    const Mat same = Mat::Constant(3, 4, 0.4);
    CHECK(triplet_loss(same, y, 0.2).loss == doctest::Approx(0.2).epsilon(1e-15));

    Mat line(1, 4);
    line << 0.0, 0.1, 1.0, 1.1;
    const BatchLoss sep = triplet_loss(line, y, 0.2);
    CHECK(sep.loss == 0.0);
    CHECK(sep.grads.isZero(0.0));
    CHECK(static_cast<double>(oracle::triplet(line, y, 0.2)) == 0.0);

    const std::vector<int> one_id{3, 3, 3};
    CHECK_FALSE(has_valid_triplet(one_id));
    CHECK_THROWS_AS(triplet_loss(Mat::Zero(2, 3), one_id, 0.2), StructuralError);
    const std::vector<int> singletons{0, 1, 2};
    CHECK_FALSE(has_valid_triplet(singletons));
    CHECK_THROWS_AS(triplet_loss(Mat::Zero(2, 3), singletons, 0.2), StructuralError);
    CHECK_THROWS_AS(triplet_loss(Mat::Zero(2, 3), y, 0.2), std::invalid_argument);
}

TEST_CASE("property: triplet loss agrees with enumeration") {
    oracle::Gen g(34);
    for (int trial = 0; trial < 200; ++trial) {
        const int ids = g.integer(2, 4);
        std::vector<int> y;
        for (int i = 0; i < ids; ++i)
            for (int k = 0; k < g.integer(2, 3); ++k) y.push_back(i);
        const Mat e = g.mat(g.integer(1, 5), static_cast<Index>(y.size()));
        const double margin = g.uniform(0.0, 1.0);
        CHECK(triplet_loss(e, y, margin).loss ==
              doctest::Approx(static_cast<double>(oracle::triplet(e, y, margin))).epsilon(1e-12));
    }
}

TEST_CASE("mil_loss cases") {
    const Vec q{{1.0, 0.0}};
    CHECK(mil_loss(q, keys_with_sims({0.3}), Mat(2, 0), 1.0).loss == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(mil_loss(q, keys_with_sims({0.4}), keys_with_sims({0.4}), 1.0).loss ==
          doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(std::abs(mil_loss(q, keys_with_sims({0.4}), keys_with_sims({0.4}), 1.0).loss - std::log(2.0)) < 1e-10);

    const double v = mil_loss(q, keys_with_sims({1.0}), keys_with_sims({0.0, 0.5}), 1.0).loss;
    CHECK(std::abs(v - kMilCase) < 1e-12);
    CHECK(std::abs(static_cast<double>(oracle::mil_from_sims({1.0L}, {0.0L, 0.5L}, 1.0L)) - kMilCase) < 1e-15);
    // the ratio written as 2.718282 / 5.367003 evaluates to the same value
    CHECK(std::abs(-std::log(2.718282 / 5.367003) - kMilCase) < 1e-5);

    CHECK_THROWS_AS(mil_loss(q, Mat(2, 0), keys_with_sims({0.1}), 1.0), StructuralError);
    CHECK_THROWS_AS(mil_loss(q, keys_with_sims({0.1}), Mat(2, 0), 0.0), std::invalid_argument);
    CHECK_THROWS_AS(mil_loss(q, Mat::Zero(3, 1), Mat(2, 0), 1.0), std::invalid_argument);
}

TEST_CASE("property: mil_loss monotone in similarities") {
    oracle::Gen g(35);
    for (int trial = 0; trial < 200; ++trial) {
        const Vec q{{1.0, 0.0}};
        std::vector<double> pos;
        std::vector<double> neg;
        for (int i = 0; i < g.integer(1, 3); ++i) pos.push_back(g.uniform(-0.9, 0.9));
        for (int i = 0; i < g.integer(1, 3); ++i) neg.push_back(g.uniform(-0.9, 0.9));
        const double tau = g.uniform(0.1, 2.0);
        const double base = mil_loss(q, keys_with_sims(pos), keys_with_sims(neg), tau).loss;
        auto pos_up = pos;
        pos_up[0] += 0.05;
        auto neg_up = neg;
        neg_up[0] += 0.05;
        CHECK(mil_loss(q, keys_with_sims(pos_up), keys_with_sims(neg), tau).loss < base);
        CHECK(mil_loss(q, keys_with_sims(pos), keys_with_sims(neg_up), tau).loss > base);
    }
}

TEST_CASE("property: mil_loss gradients match differences") {
    oracle::Gen g(36);
    for (int trial = 0; trial < 100; ++trial) {
        const Index d = g.integer(2, 5);
        const Vec q = g.vec(d, -1.0, 1.0);
        const Mat pos = g.mat(d, g.integer(1, 3), 0.7);
        const Mat neg = g.mat(d, g.integer(0, 3), 0.7);
        const double tau = g.uniform(0.2, 2.0);
        const MilQueryLoss l = mil_loss(q, pos, neg, tau);
        for (Index i = 0; i < d; ++i) {
            const double nq = numeric_derivative(
                [&](double x) {
                    Vec v = q;
                    v[i] = x;
                    return mil_loss(v, pos, neg, tau).loss;
                },
                q[i]);
            CHECK(oracle::rel_err(l.grad_q[i], nq) < 1e-6);
            const double np = numeric_derivative(
                [&](double x) {
                    Mat v = pos;
                    v(i, 0) = x;
                    return mil_loss(q, v, neg, tau).loss;
                },
                pos(i, 0));
            CHECK(oracle::rel_err(l.grad_pos(i, 0), np) < 1e-6);
            if (neg.cols() > 0) {
                const double nn = numeric_derivative(
                    [&](double x) {
                        Mat v = neg;
                        v(i, 0) = x;
                        return mil_loss(q, pos, v, tau).loss;
                    },
                    neg(i, 0));
                CHECK(oracle::rel_err(l.grad_neg(i, 0), nn) < 1e-6);
            }
        }
    }
}

TEST_CASE("property: batch MIL agrees with the oracle") {
    oracle::Gen g(37);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<int> y;
        for (int i = 0; i < g.integer(2, 4); ++i)
            for (int k = 0; k < g.integer(1, 3); ++k) y.push_back(i);
        const Mat e = g.mat(g.integer(2, 5), static_cast<Index>(y.size()));
        const double tau = g.uniform(0.2, 2.0);
        CHECK(mil_batch_loss(e, y, tau).loss ==
              doctest::Approx(static_cast<double>(oracle::mil_batch(e, y, tau))).epsilon(1e-12));
    }
    const std::vector<int> singletons{0, 1, 2};
    const BatchLoss none = mil_batch_loss(Mat::Ones(2, 3), singletons, 1.0);
    CHECK(none.loss == 0.0);
    CHECK(none.grads.isZero(0.0));
}

TEST_CASE("crc_combine") {
    const LossParts parts{1.0, 2.0, 3.0, 4.0};
    CHECK(crc_combine(parts, {0.0, 0.0, 0.0, 0.0}).l_crc == 0.0);
    CHECK(crc_combine(parts, {1.0, 0.0, 0.0, 0.0}).l_crc == 1.0);
    CHECK(crc_combine(parts, {0.1, 1.0, 0.1, 0.1}).l_crc == doctest::Approx(2.8).epsilon(1e-15));
    CHECK(crc_combine(parts, CoeffSchedule::clean_default(), 123).l_crc == doctest::Approx(2.8).epsilon(1e-15));
    const LossBreakdown b = crc_combine(parts, {0.5, 0.25, 0.125, 2.0});
    CHECK(b.l_c == 1.0);
    CHECK(b.l_mil == 4.0);
    CHECK(b.sigma[3] == 2.0);
}

TEST_CASE("property: crc_combine is linear in each component") {
    oracle::Gen g(38);
    for (int trial = 0; trial < 200; ++trial) {
        const std::array<double, 4> s{g.uniform(0, 1), g.uniform(0, 1), g.uniform(0, 1), g.uniform(0, 1)};
        LossParts a{g.uniform(0, 5), g.uniform(0, 5), g.uniform(0, 5), g.uniform(0, 5)};
        LossParts b = a;
        const double k = g.uniform(-3, 3);
        b.l_tri = a.l_tri + k;
        CHECK(crc_combine(b, s).l_crc - crc_combine(a, s).l_crc == doctest::Approx(s[2] * k).epsilon(1e-12));
        b = a;
        b.l_c = a.l_c + k;
        CHECK(crc_combine(b, s).l_crc - crc_combine(a, s).l_crc == doctest::Approx(s[0] * k).epsilon(1e-12));
    }
}

TEST_CASE("coefficient schedules") {
    const Ramp r{0.01, 0.1, 100};
    CHECK(r.at(0) == 0.01);
    CHECK(r.at(50) == doctest::Approx(0.055));
    CHECK(r.at(100) == 0.1);
    CHECK(r.at(5000) == 0.1);
    CHECK(Ramp::constant(0.3).at(7) == 0.3);

    const CoeffSchedule s = CoeffSchedule::noisy_default(2000);
    CHECK(s.at(0) == std::array<double, 4>{0.01, 1.0, 0.01, 0.01});
    CHECK(s.at(1000) == std::array<double, 4>{0.1, 0.1, 0.1, 0.1});
    CHECK(s.at(1999) == std::array<double, 4>{0.1, 0.1, 0.1, 0.1});
    CHECK(CoeffSchedule::clean_default().at(10) == std::array<double, 4>{0.1, 1.0, 0.1, 0.1});
}
