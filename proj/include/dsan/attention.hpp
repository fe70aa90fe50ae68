#pragma once

// Scaled dot-product attention computed independently per subspace (the
// leading axis), multi-head projections on top of it, and the additive
// masks that exclude empty grids and future decoder positions.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsan/encodings.hpp"
#include "dsan/tensor.hpp"

namespace dsan {

// Attention weights for one head: softmax(Q K' / sqrt(d_h) + M) V, with the
// transpose of K taken over its last two axes. An undefined mask means no
// masking.
inline Tensor att(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask) {
    if (q.shape().back() != k.shape().back())
        throw ShapeError("att: query/key depth mismatch: " + shape_str(q.shape()) + " vs " +
                         shape_str(k.shape()));
    const double dh = static_cast<double>(q.shape().back());
    Tensor logits = scale(matmul(q, swap_axes(k, k.rank() - 2, k.rank() - 1)),
                          1.0 / std::sqrt(dh));
    return matmul(masked_softmax(logits, mask), v);
}

// Per-instance projection matrices for multi-head attention: n_h triples of
// d x d_h plus the d x d output projection. No cross-instance sharing.
struct MsaParams {
    int heads = 0;
    int dim = 0;
    std::vector<Tensor> wq, wk, wv;
    Tensor wo;

    int head_dim() const { return dim / heads; }

    static MsaParams init(int d, int n_h, std::mt19937_64& rng) {
        if (n_h < 1 || d % n_h != 0)
            throw std::invalid_argument("msa: model dim " + std::to_string(d) +
                                        " not divisible by heads " + std::to_string(n_h));
        MsaParams p;
        p.heads = n_h;
        p.dim = d;
        const int dh = d / n_h;
        for (int i = 0; i < n_h; ++i) {
            p.wq.push_back(TemporalEncodingParams::init_weight({d, dh}, d, rng));
            p.wk.push_back(TemporalEncodingParams::init_weight({d, dh}, d, rng));
            p.wv.push_back(TemporalEncodingParams::init_weight({d, dh}, d, rng));
        }
        p.wo = TemporalEncodingParams::init_weight({d, d}, d, rng);
        return p;
    }

    // Single head with identity projections; msa() then reduces to att().
    static MsaParams identity(int d) {
        MsaParams p;
        p.heads = 1;
        p.dim = d;
        std::vector<double> eye(static_cast<size_t>(d) * d, 0.0);
        for (int i = 0; i < d; ++i) eye[static_cast<size_t>(i) * d + i] = 1.0;
        p.wq.push_back(Tensor::from({d, d}, eye));
        p.wk.push_back(Tensor::from({d, d}, eye));
        p.wv.push_back(Tensor::from({d, d}, eye));
        p.wo = Tensor::from({d, d}, eye);
        return p;
    }

    void collect(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix) const {
        for (int i = 0; i < heads; ++i) {
            out.emplace_back(prefix + ".wq." + std::to_string(i), wq[static_cast<size_t>(i)]);
            out.emplace_back(prefix + ".wk." + std::to_string(i), wk[static_cast<size_t>(i)]);
            out.emplace_back(prefix + ".wv." + std::to_string(i), wv[static_cast<size_t>(i)]);
        }
        out.emplace_back(prefix + ".wo", wo);
    }
};

// Multi-head attention over subspaces: project per head, attend, concatenate
// heads along the last axis, project back to d.
inline Tensor msa(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask,
                  const MsaParams& p) {
    std::vector<Tensor> heads;
    heads.reserve(static_cast<size_t>(p.heads));
    for (int i = 0; i < p.heads; ++i) {
        const auto hi = static_cast<size_t>(i);
        heads.push_back(att(matmul(q, p.wq[hi]), matmul(k, p.wk[hi]), matmul(v, p.wv[hi]), mask));
    }
    Tensor merged = p.heads == 1 ? heads[0] : concat_last(heads);
    return matmul(merged, p.wo);
}

constexpr double kMaskOff = -std::numeric_limits<double>::infinity();

// Per-key threshold mask from raw (pre-normalization) features: a grid whose
// features sum to zero at time t is excluded as a key at that time. Stored
// as steps x 1 x N and broadcast over queries, which also serves
// cross-attention where the query count differs from N.
inline Tensor threshold_mask(const Tensor& raw) {
    if (raw.rank() != 3)
        throw ShapeError("threshold_mask: expected (steps,N,b), got " + shape_str(raw.shape()));
    const int steps = raw.shape()[0], n = raw.shape()[1], b = raw.shape()[2];
    std::vector<double> m(static_cast<size_t>(steps) * n, kMaskOff);
    for (int t = 0; t < steps; ++t)
        for (int i = 0; i < n; ++i) {
            double s = 0.0;
            for (int j = 0; j < b; ++j)
                s += raw.data()[(static_cast<size_t>(t) * n + i) * b + j];
            if (s > 0.0) m[static_cast<size_t>(t) * n + i] = 0.0;
        }
    return Tensor::from({steps, 1, n}, std::move(m));
}

// Combined look-ahead and threshold mask for the decoder: position i may
// attend to position j only when j <= i and position j's raw features sum
// to a positive value. Shape 1 x f x f, broadcast over subspaces.
inline Tensor lookahead_threshold_mask_from_sums(const std::vector<double>& position_sums) {
    const int f = static_cast<int>(position_sums.size());
    std::vector<double> m(static_cast<size_t>(f) * f, kMaskOff);
    for (int i = 0; i < f; ++i)
        for (int j = 0; j <= i; ++j)
            if (position_sums[static_cast<size_t>(j)] > 0.0)
                m[static_cast<size_t>(i) * f + j] = 0.0;
    return Tensor::from({1, f, f}, std::move(m));
}

inline Tensor lookahead_threshold_mask(const Tensor& raw) {
    if (raw.rank() != 3 || raw.shape()[0] != 1)
        throw ShapeError("lookahead_threshold_mask: expected (1,f,b), got " +
                         shape_str(raw.shape()));
    const int f = raw.shape()[1], b = raw.shape()[2];
    std::vector<double> sums(static_cast<size_t>(f), 0.0);
    for (int j = 0; j < f; ++j)
        for (int kf = 0; kf < b; ++kf)
            sums[static_cast<size_t>(j)] += raw.data()[static_cast<size_t>(j) * b + kf];
    return lookahead_threshold_mask_from_sums(sums);
}

// Switch the subspace layout: (A, B, d) -> (B, A, d).
inline Tensor subspace_switch(const Tensor& x) { return swap_axes(x, 0, 1); }

// The three masks a sample carries; entries are 0 or -inf.
struct MaskSet {
    Tensor global;   // steps x 1 x N
    Tensor local;    // steps x 1 x N_D
    Tensor decoder;  // 1 x f x f
};

}  // namespace dsan
