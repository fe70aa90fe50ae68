#include "doctest.h"

#include <cmath>
#include <random>

#include "dsan/attention.hpp"
#include "dsan/gradcheck.hpp"

using namespace dsan;

namespace {

// naive reference: per subspace, softmax(q k' / sqrt(dh) + m) v via loops
Tensor att_reference(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask) {
    const int s = q.shape()[0], lq = q.shape()[1], dh = q.shape()[2];
    const int lk = k.shape()[1];
    const double ninf = -std::numeric_limits<double>::infinity();
    std::vector<double> out(static_cast<size_t>(s) * lq * dh, 0.0);
    for (int b = 0; b < s; ++b)
        for (int i = 0; i < lq; ++i) {
            std::vector<double> logits(static_cast<size_t>(lk));
            for (int j = 0; j < lk; ++j) {
                double dot = 0.0;
                for (int l = 0; l < dh; ++l) dot += q.at({b, i, l}) * k.at({b, j, l});
                double m = 0.0;
                if (mask.defined()) {
                    // mask broadcast over (s, lq, lk)
                    const Shape& ms = mask.shape();
                    const int mb = ms[0] == 1 ? 0 : b;
                    const int mi = ms[1] == 1 ? 0 : i;
                    m = mask.at({mb, mi, j});
                }
                logits[static_cast<size_t>(j)] = dot / std::sqrt(static_cast<double>(dh)) + m;
            }
            double mx = ninf;
            for (double z : logits) mx = std::max(mx, z);
            std::vector<double> w(static_cast<size_t>(lk), 0.0);
            double denom = 0.0;
            if (mx != ninf) {
                for (int j = 0; j < lk; ++j) {
                    if (logits[static_cast<size_t>(j)] == ninf) continue;
                    w[static_cast<size_t>(j)] = std::exp(logits[static_cast<size_t>(j)] - mx);
                    denom += w[static_cast<size_t>(j)];
                }
                for (auto& x : w) x /= denom;
            }
            for (int l = 0; l < dh; ++l) {
                double acc = 0.0;
                for (int j = 0; j < lk; ++j) acc += w[static_cast<size_t>(j)] * v.at({b, j, l});
                out[(static_cast<size_t>(b) * lq + i) * dh + l] = acc;
            }
        }
    return Tensor::from(q.shape(), std::move(out));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    for (size_t i = 0; i < a.data().size(); ++i)
        worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    return worst;
}

}  // namespace

TEST_CASE("attention with a single unmasked key returns the value row") {
    std::mt19937_64 rng(1);
    Tensor q = gradcheck::random_tensor({1, 3, 4}, rng, false);
    Tensor k = gradcheck::random_tensor({1, 1, 4}, rng, false);
    Tensor v = gradcheck::random_tensor({1, 1, 4}, rng, false);
    Tensor out = att(q, k, v, Tensor::zeros({1, 1, 1}));
    for (int i = 0; i < 3; ++i)
        for (int l = 0; l < 4; ++l) CHECK(out.at({0, i, l}) == v.at({0, 0, l}));
}

TEST_CASE("attention with the second key masked returns the first value row") {
    std::mt19937_64 rng(2);
    Tensor q = gradcheck::random_tensor({1, 2, 4}, rng, false);
    Tensor k = gradcheck::random_tensor({1, 2, 4}, rng, false);
    Tensor v = gradcheck::random_tensor({1, 2, 4}, rng, false);
    const double ninf = -std::numeric_limits<double>::infinity();
    Tensor mask = Tensor::from({1, 1, 2}, {0.0, ninf});
    Tensor out = att(q, k, v, mask);
    for (int i = 0; i < 2; ++i)
        for (int l = 0; l < 4; ++l) CHECK(out.at({0, i, l}) == v.at({0, 0, l}));
}

TEST_CASE("attention matches the loop reference on random inputs") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor q = gradcheck::random_tensor({2, 3, 4}, rng, false);
        Tensor k = gradcheck::random_tensor({2, 5, 4}, rng, false);
        Tensor v = gradcheck::random_tensor({2, 5, 4}, rng, false);
        std::vector<double> m(static_cast<size_t>(2 * 5), 0.0);
        for (auto& x : m)
            if (uniform01(rng) < 0.3) x = -std::numeric_limits<double>::infinity();
        Tensor mask = Tensor::from({2, 1, 5}, std::move(m));
        CHECK(max_abs_diff(att(q, k, v, mask), att_reference(q, k, v, mask)) <= 1e-12);
    }
}

TEST_CASE("attention rejects mismatched query and key depth") {
    CHECK_THROWS_AS(att(Tensor::zeros({1, 2, 4}), Tensor::zeros({1, 2, 6}),
                        Tensor::zeros({1, 2, 6}), Tensor()),
                    ShapeError);
}

TEST_CASE("multi-head attention with identity projections reduces to plain attention") {
    std::mt19937_64 rng(4);
    MsaParams id = MsaParams::identity(6);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor q = gradcheck::random_tensor({2, 3, 6}, rng, false);
        Tensor k = gradcheck::random_tensor({2, 4, 6}, rng, false);
        Tensor v = gradcheck::random_tensor({2, 4, 6}, rng, false);
        CHECK(max_abs_diff(msa(q, k, v, Tensor(), id), att(q, k, v, Tensor())) <= 1e-12);
    }
}

TEST_CASE("multi-head attention output shape is (subspaces, queries, dim)") {
    std::mt19937_64 rng(5);
    MsaParams p = MsaParams::init(8, 4, rng);
    Tensor q = gradcheck::random_tensor({3, 5, 8}, rng, false);
    Tensor kv = gradcheck::random_tensor({3, 7, 8}, rng, false);
    CHECK(msa(q, kv, kv, Tensor(), p).shape() == Shape{3, 5, 8});
}

TEST_CASE("two heads match a reference that splits the dim in halves") {
    std::mt19937_64 rng(6);
    const int d = 8, dh = 4;
    // build projections that select the first/second half of the features
    MsaParams p;
    p.heads = 2;
    p.dim = d;
    for (int head = 0; head < 2; ++head) {
        std::vector<double> sel(static_cast<size_t>(d) * dh, 0.0);
        for (int j = 0; j < dh; ++j) sel[static_cast<size_t>(head * dh + j) * dh + j] = 1.0;
        p.wq.push_back(Tensor::from({d, dh}, sel));
        p.wk.push_back(Tensor::from({d, dh}, sel));
        p.wv.push_back(Tensor::from({d, dh}, sel));
    }
    std::vector<double> eye(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i) eye[static_cast<size_t>(i) * d + i] = 1.0;
    p.wo = Tensor::from({d, d}, eye);

    Tensor q = gradcheck::random_tensor({2, 3, d}, rng, false);
    Tensor kv = gradcheck::random_tensor({2, 5, d}, rng, false);
    Tensor got = msa(q, kv, kv, Tensor(), p);

    Tensor lo = att(slice_last(q, 0, dh), slice_last(kv, 0, dh), slice_last(kv, 0, dh), Tensor());
    Tensor hi = att(slice_last(q, dh, d), slice_last(kv, dh, d), slice_last(kv, dh, d), Tensor());
    Tensor want = concat_last({lo, hi});
    CHECK(max_abs_diff(got, want) <= 1e-12);
}

TEST_CASE("heads must divide the model dimension") {
    std::mt19937_64 rng(7);
    CHECK_THROWS_AS(MsaParams::init(63, 8, rng), std::invalid_argument);
}

TEST_CASE("threshold mask spec cases") {
    SUBCASE("all-positive features leave every key open") {
        Tensor x = Tensor::filled({2, 3, 2}, 0.5);
        Tensor m = threshold_mask(x);
        REQUIRE(m.shape() == Shape{2, 1, 3});
        for (double v : m.data()) CHECK(v == 0.0);
    }
    SUBCASE("an all-zero grid is excluded at that time step only") {
        Tensor x = Tensor::filled({2, 4, 2}, 1.0);
        for (int f = 0; f < 2; ++f) x.raw()[(static_cast<size_t>(1) * 4 + 3) * 2 + f] = 0.0;
        Tensor m = threshold_mask(x);
        CHECK(m.at({1, 0, 3}) == kMaskOff);
        CHECK(m.at({0, 0, 3}) == 0.0);
        for (int g = 0; g < 3; ++g) {
            CHECK(m.at({0, 0, g}) == 0.0);
            CHECK(m.at({1, 0, g}) == 0.0);
        }
    }
    SUBCASE("zero-padded local positions are masked by the same rule") {
        Tensor x = Tensor::filled({1, 9, 1}, 2.0);
        for (int w = 0; w < 3; ++w) x.raw()[static_cast<size_t>(w)] = 0.0;  // padded top row
        Tensor m = threshold_mask(x);
        CHECK(m.at({0, 0, 0}) == kMaskOff);
        CHECK(m.at({0, 0, 1}) == kMaskOff);
        CHECK(m.at({0, 0, 2}) == kMaskOff);
        CHECK(m.at({0, 0, 4}) == 0.0);
    }
}

TEST_CASE("look-ahead threshold mask spec cases") {
    SUBCASE("all-positive input gives the pure lower triangle") {
        Tensor x = Tensor::filled({1, 3, 2}, 1.0);
        Tensor m = lookahead_threshold_mask(x);
        REQUIRE(m.shape() == Shape{1, 3, 3});
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                CHECK(m.at({0, i, j}) == (j <= i ? 0.0 : kMaskOff));
    }
    SUBCASE("an empty position is excluded as a key everywhere") {
        Tensor x = Tensor::filled({1, 3, 2}, 1.0);
        x.raw()[2] = 0.0;
        x.raw()[3] = 0.0;  // position 1 empty
        Tensor m = lookahead_threshold_mask(x);
        for (int i = 0; i < 3; ++i) CHECK(m.at({0, i, 1}) == kMaskOff);
        CHECK(m.at({0, 1, 0}) == 0.0);
        CHECK(m.at({0, 2, 2}) == 0.0);
    }
    SUBCASE("length one with content is a single open entry") {
        Tensor m = lookahead_threshold_mask(Tensor::filled({1, 1, 2}, 1.0));
        CHECK(m.at({0, 0, 0}) == 0.0);
    }
}

TEST_CASE("subspace switch is an involution that transposes the leading axes") {
    std::mt19937_64 rng(8);
    Tensor x = gradcheck::random_tensor({4, 3, 8}, rng, false);
    Tensor y = subspace_switch(x);
    CHECK(y.shape() == Shape{3, 4, 8});
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 3; ++b)
            for (int l = 0; l < 8; ++l) CHECK(y.at({b, a, l}) == x.at({a, b, l}));
    Tensor back = subspace_switch(y);
    CHECK(back.data() == x.data());
}

TEST_CASE("perturbing values at masked keys leaves attention bit-identical") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor q = gradcheck::random_tensor({2, 3, 4}, rng, false);
        Tensor k = gradcheck::random_tensor({2, 5, 4}, rng, false);
        Tensor v = gradcheck::random_tensor({2, 5, 4}, rng, false);
        std::vector<double> m(static_cast<size_t>(2 * 5), 0.0);
        m[3] = kMaskOff;
        m[5 + 1] = kMaskOff;
        Tensor mask = Tensor::from({2, 1, 5}, m);
        Tensor base = att(q, k, v, mask);
        Tensor v2 = Tensor::from(v.shape(), v.data());
        for (int l = 0; l < 4; ++l) {
            v2.raw()[(static_cast<size_t>(0) * 5 + 3) * 4 + l] += uniform(rng, -10.0, 10.0);
            v2.raw()[(static_cast<size_t>(1) * 5 + 1) * 4 + l] += uniform(rng, -10.0, 10.0);
        }
        Tensor perturbed = att(q, k, v2, mask);
        CHECK(base.data() == perturbed.data());
    }
}

TEST_CASE("look-ahead mask makes outputs independent of future keys") {
    std::mt19937_64 rng(10);
    const int f = 4;
    Tensor mask = lookahead_threshold_mask_from_sums({1, 1, 1, 1});
    for (int trial = 0; trial < 10; ++trial) {
        Tensor q = gradcheck::random_tensor({1, f, 4}, rng, false);
        Tensor kv = gradcheck::random_tensor({1, f, 4}, rng, false);
        Tensor base = att(q, kv, kv, mask);
        const int j = 1 + uniform_int(rng, f - 1);
        Tensor kv2 = Tensor::from(kv.shape(), kv.data());
        for (int l = 0; l < 4; ++l) kv2.raw()[(static_cast<size_t>(j)) * 4 + l] += 3.0;
        Tensor perturbed = att(q, kv2, kv2, mask);
        for (int i = 0; i < j; ++i)
            for (int l = 0; l < 4; ++l) CHECK(base.at({0, i, l}) == perturbed.at({0, i, l}));
    }
}

TEST_CASE("scaled logits keep unit variance for unit-variance inputs") {
    // off-diagonal entries of q k' / sqrt(dh) over many draws
    std::mt19937_64 rng(11);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int dh = 64;
    double sum = 0.0, sumsq = 0.0;
    long count = 0;
    while (count < 10000) {
        std::vector<double> qd(static_cast<size_t>(2) * dh);
        for (auto& x : qd) x = gauss(rng);
        Tensor q = Tensor::from({1, 2, dh}, std::move(qd));
        // queries equal keys; the diagonal is the degenerate self-product,
        // the off-diagonal entries are the O(1) logits of interest
        Tensor logits = scale(matmul(q, swap_axes(q, 1, 2)), 1.0 / std::sqrt(double(dh)));
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                if (i == j) continue;
                const double z = logits.at({0, i, j});
                sum += z;
                sumsq += z * z;
                ++count;
            }
    }
    const double mean = sum / static_cast<double>(count);
    const double var = sumsq / static_cast<double>(count) - mean * mean;
    CHECK(std::abs(var - 1.0) < 0.2);
}
