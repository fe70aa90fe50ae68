#pragma once

// Dense N-dimensional double tensors with reverse-mode automatic
// differentiation. Every op allocates a fresh output and records a
// backward closure, so the graph is a DAG of immutable values; only
// grad buffers mutate after creation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace dsan {

using Shape = std::vector<int>;

inline int shape_numel(const Shape& s) {
    int n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Thread-local autograd switch. Ops record backward closures only while
// enabled; NoGradGuard turns it off for eval-only forwards.
inline bool& autograd_enabled() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(autograd_enabled()) { autograd_enabled() = false; }
    ~NoGradGuard() { autograd_enabled() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    // Reads this node's grad/data and accumulates into parents' grads.
    std::function<void(const TensorNode&)> backprop;

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

    static Tensor zeros(const Shape& s, bool requires_grad = false) {
        return filled(s, 0.0, requires_grad);
    }
    static Tensor filled(const Shape& s, double v, bool requires_grad = false) {
        auto n = std::make_shared<TensorNode>();
        n->shape = s;
        n->data.assign(shape_numel(s), v);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }
    static Tensor from(const Shape& s, std::vector<double> data, bool requires_grad = false) {
        if (static_cast<int>(data.size()) != shape_numel(s))
            throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(s));
        auto n = std::make_shared<TensorNode>();
        n->shape = s;
        n->data = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }
    static Tensor scalar(double v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int size() const { return static_cast<int>(node_->data.size()); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }

    const std::vector<double>& data() const { return node_->data; }
    // Mutable access for parameter updates and sample builders; must not be
    // used on values that already participate in a live graph.
    std::vector<double>& raw() { return node_->data; }

    bool requires_grad() const { return node_->requires_grad; }
    const std::vector<double>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

    double item() const {
        if (size() != 1)
            throw ShapeError("item: tensor " + shape_str(shape()) + " is not scalar");
        return node_->data[0];
    }
    double at(std::initializer_list<int> idx) const {
        const Shape& s = node_->shape;
        if (idx.size() != s.size())
            throw ShapeError("at: rank mismatch for shape " + shape_str(s));
        int flat = 0, axis = 0;
        for (int i : idx) {
            if (i < 0 || i >= s[static_cast<size_t>(axis)])
                throw ShapeError("at: index out of range in axis " + std::to_string(axis));
            flat = flat * s[static_cast<size_t>(axis)] + i;
            ++axis;
        }
        return node_->data[static_cast<size_t>(flat)];
    }

    NodePtr node() const { return node_; }

private:
    NodePtr node_;
};

namespace detail {

inline bool any_requires_grad(const std::vector<Tensor>& ts) {
    for (const auto& t : ts)
        if (t.requires_grad()) return true;
    return false;
}

inline Tensor make_op(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                      std::function<void(const TensorNode&)> backprop) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    if (autograd_enabled() && any_requires_grad(parents)) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backprop = std::move(backprop);
    }
    return Tensor(std::move(n));
}

inline void accumulate(TensorNode& n, const std::vector<double>& g) {
    n.ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

// numpy-style broadcast of two shapes (align right; dims equal or 1).
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
    const int r = std::max(ra, rb);
    Shape out(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) {
        const int da = i < r - ra ? 1 : a[static_cast<size_t>(i - (r - ra))];
        const int db = i < r - rb ? 1 : b[static_cast<size_t>(i - (r - rb))];
        if (da != db && da != 1 && db != 1)
            throw ShapeError("broadcast: incompatible shapes " + shape_str(a) + " and " +
                             shape_str(b));
        out[static_cast<size_t>(i)] = std::max(da, db);
    }
    return out;
}

// Strides of `s` embedded into a broadcast target of rank r; broadcast axes
// get stride 0.
inline std::vector<int> broadcast_strides(const Shape& s, int target_rank) {
    const int rs = static_cast<int>(s.size());
    std::vector<int> strides(static_cast<size_t>(target_rank), 0);
    int acc = 1;
    for (int i = rs - 1; i >= 0; --i) {
        const int axis = target_rank - rs + i;
        strides[static_cast<size_t>(axis)] = (s[static_cast<size_t>(i)] == 1) ? 0 : acc;
        acc *= s[static_cast<size_t>(i)];
    }
    return strides;
}

// True when `inner` equals the trailing axes of `outer` (plain repetition
// over the leading axes); the common bias / per-row case.
inline bool is_suffix_shape(const Shape& inner, const Shape& outer) {
    size_t skip = 0;  // leading 1-axes of inner are plain repetition too
    while (skip < inner.size() && inner[skip] == 1) ++skip;
    if (inner.size() - skip > outer.size()) return false;
    return std::equal(inner.rbegin(), inner.rend() - static_cast<long>(skip), outer.rbegin());
}

// Sum `g` (shaped gs) down to `target` shape (inverse of broadcasting).
inline std::vector<double> reduce_to_shape(const std::vector<double>& g, const Shape& gs,
                                           const Shape& target) {
    if (gs == target) return g;
    if (is_suffix_shape(target, gs)) {
        const size_t width = static_cast<size_t>(shape_numel(target));
        std::vector<double> out(width, 0.0);
        for (size_t i = 0; i < g.size(); i += width)
            for (size_t j = 0; j < width; ++j) out[j] += g[i + j];
        return out;
    }
    std::vector<double> out(static_cast<size_t>(shape_numel(target)), 0.0);
    const int r = static_cast<int>(gs.size());
    const std::vector<int> tstr = broadcast_strides(target, r);
    std::vector<int> idx(static_cast<size_t>(r), 0);
    int toff = 0;
    for (size_t flat = 0; flat < g.size(); ++flat) {
        out[static_cast<size_t>(toff)] += g[flat];
        for (int axis = r - 1; axis >= 0; --axis) {
            auto ax = static_cast<size_t>(axis);
            if (++idx[ax] < gs[ax]) {
                toff += tstr[ax];
                break;
            }
            idx[ax] = 0;
            toff -= tstr[ax] * (gs[ax] - 1);
        }
    }
    return out;
}

// Elementwise binary op with broadcasting; fast path for equal shapes.
template <typename F>
inline std::vector<double> broadcast_zip(const std::vector<double>& a, const Shape& as,
                                         const std::vector<double>& b, const Shape& bs,
                                         const Shape& os, F&& f) {
    std::vector<double> out(static_cast<size_t>(shape_numel(os)));
    if (as == bs) {
        for (size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
        return out;
    }
    if (as == os && is_suffix_shape(bs, as)) {
        const size_t width = b.size();
        for (size_t i = 0; i < out.size(); i += width)
            for (size_t j = 0; j < width; ++j) out[i + j] = f(a[i + j], b[j]);
        return out;
    }
    if (bs == os && is_suffix_shape(as, bs)) {
        const size_t width = a.size();
        for (size_t i = 0; i < out.size(); i += width)
            for (size_t j = 0; j < width; ++j) out[i + j] = f(a[j], b[i + j]);
        return out;
    }
    const int r = static_cast<int>(os.size());
    const std::vector<int> sa = broadcast_strides(as, r);
    const std::vector<int> sb = broadcast_strides(bs, r);
    std::vector<int> idx(static_cast<size_t>(r), 0);
    int oa = 0, ob = 0;
    for (size_t flat = 0; flat < out.size(); ++flat) {
        out[flat] = f(a[static_cast<size_t>(oa)], b[static_cast<size_t>(ob)]);
        for (int axis = r - 1; axis >= 0; --axis) {
            auto ax = static_cast<size_t>(axis);
            if (++idx[ax] < os[ax]) {
                oa += sa[ax];
                ob += sb[ax];
                break;
            }
            idx[ax] = 0;
            oa -= sa[ax] * (os[ax] - 1);
            ob -= sb[ax] * (os[ax] - 1);
        }
    }
    return out;
}

// Expand `a` (shaped as) to broadcast shape os.
inline std::vector<double> broadcast_expand(const std::vector<double>& a, const Shape& as,
                                            const Shape& os) {
    if (as == os) return a;
    std::vector<double> out(static_cast<size_t>(shape_numel(os)));
    const int r = static_cast<int>(os.size());
    const std::vector<int> sa = broadcast_strides(as, r);
    std::vector<int> idx(static_cast<size_t>(r), 0);
    int oa = 0;
    for (size_t flat = 0; flat < out.size(); ++flat) {
        out[flat] = a[static_cast<size_t>(oa)];
        for (int axis = r - 1; axis >= 0; --axis) {
            auto ax = static_cast<size_t>(axis);
            if (++idx[ax] < os[ax]) {
                oa += sa[ax];
                break;
            }
            idx[ax] = 0;
            oa -= sa[ax] * (os[ax] - 1);
        }
    }
    return out;
}

// --- raw batched matmul -------------------------------------------------

// a: lead_a x m x k, b: lead_b x k x n, leading axes broadcast.
inline std::vector<double> batched_matmul_raw(const std::vector<double>& a, const Shape& as,
                                              const std::vector<double>& b, const Shape& bs,
                                              Shape* out_shape) {
    const int ra = static_cast<int>(as.size()), rb = static_cast<int>(bs.size());
    if (ra < 2 || rb < 2)
        throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(as) + " and " +
                         shape_str(bs));
    const int m = as[static_cast<size_t>(ra - 2)], ka = as[static_cast<size_t>(ra - 1)];
    const int kb = bs[static_cast<size_t>(rb - 2)], n = bs[static_cast<size_t>(rb - 1)];
    if (ka != kb)
        throw ShapeError("matmul: inner axes do not conform: " + shape_str(as) + " x " +
                         shape_str(bs));
    const Shape lead_a(as.begin(), as.end() - 2);
    const Shape lead_b(bs.begin(), bs.end() - 2);
    const Shape lead = broadcast_shape(lead_a, lead_b);
    Shape os = lead;
    os.push_back(m);
    os.push_back(n);
    if (out_shape) *out_shape = os;

    const int batches = shape_numel(lead);
    const int lr = static_cast<int>(lead.size());
    const std::vector<int> stra = broadcast_strides(lead_a, lr);
    const std::vector<int> strb = broadcast_strides(lead_b, lr);
    std::vector<double> out(static_cast<size_t>(batches) * m * n, 0.0);

    std::vector<int> idx(static_cast<size_t>(lr), 0);
    for (int bi = 0; bi < batches; ++bi) {
        int offa = 0, offb = 0;
        for (int axis = 0; axis < lr; ++axis) {
            offa += idx[static_cast<size_t>(axis)] * stra[static_cast<size_t>(axis)];
            offb += idx[static_cast<size_t>(axis)] * strb[static_cast<size_t>(axis)];
        }
        const double* pa = a.data() + static_cast<size_t>(offa) * m * ka;
        const double* pb = b.data() + static_cast<size_t>(offb) * ka * n;
        double* pc = out.data() + static_cast<size_t>(bi) * m * n;
        for (int i = 0; i < m; ++i) {
            const double* arow = pa + static_cast<size_t>(i) * ka;
            double* crow = pc + static_cast<size_t>(i) * n;
            for (int k = 0; k < ka; ++k) {
                const double av = arow[k];
                if (av == 0.0) continue;
                const double* brow = pb + static_cast<size_t>(k) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
        for (int axis = lr - 1; axis >= 0; --axis) {
            auto ax = static_cast<size_t>(axis);
            if (++idx[ax] < lead[ax]) break;
            idx[ax] = 0;
        }
    }
    return out;
}

inline std::vector<double> transpose_last_raw(const std::vector<double>& a, const Shape& as,
                                              Shape* out_shape) {
    const int r = static_cast<int>(as.size());
    const int m = as[static_cast<size_t>(r - 2)], n = as[static_cast<size_t>(r - 1)];
    Shape os = as;
    std::swap(os[static_cast<size_t>(r - 2)], os[static_cast<size_t>(r - 1)]);
    if (out_shape) *out_shape = os;
    const int batches = shape_numel(Shape(as.begin(), as.end() - 2));
    std::vector<double> out(a.size());
    for (int bi = 0; bi < batches; ++bi) {
        const double* pa = a.data() + static_cast<size_t>(bi) * m * n;
        double* po = out.data() + static_cast<size_t>(bi) * m * n;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                po[static_cast<size_t>(j) * m + i] = pa[static_cast<size_t>(i) * n + j];
    }
    return out;
}

inline std::vector<double> swap_axes_raw(const std::vector<double>& a, const Shape& as, int i,
                                         int j, Shape* out_shape) {
    const int r = static_cast<int>(as.size());
    if (i < 0 || i >= r || j < 0 || j >= r)
        throw ShapeError("swap_axes: axis out of range for shape " + shape_str(as));
    Shape os = as;
    std::swap(os[static_cast<size_t>(i)], os[static_cast<size_t>(j)]);
    if (out_shape) *out_shape = os;
    if (i == j) return a;
    std::vector<int> in_strides(static_cast<size_t>(r), 1);
    for (int ax = r - 2; ax >= 0; --ax)
        in_strides[static_cast<size_t>(ax)] =
            in_strides[static_cast<size_t>(ax + 1)] * as[static_cast<size_t>(ax + 1)];
    std::vector<int> strides = in_strides;
    std::swap(strides[static_cast<size_t>(i)], strides[static_cast<size_t>(j)]);
    std::vector<double> out(a.size());
    std::vector<int> idx(static_cast<size_t>(r), 0);
    int src = 0;
    for (size_t flat = 0; flat < out.size(); ++flat) {
        out[flat] = a[static_cast<size_t>(src)];
        for (int axis = r - 1; axis >= 0; --axis) {
            auto ax = static_cast<size_t>(axis);
            if (++idx[ax] < os[ax]) {
                src += strides[ax];
                break;
            }
            idx[ax] = 0;
            src -= strides[ax] * (os[ax] - 1);
        }
    }
    return out;
}

}  // namespace detail

// --- elementwise and structural ops --------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    const Shape os = detail::broadcast_shape(a.shape(), b.shape());
    auto data = detail::broadcast_zip(a.data(), a.shape(), b.data(), b.shape(), os,
                                      [](double x, double y) { return x + y; });
    auto an = a.node(), bn = b.node();
    return detail::make_op(os, std::move(data), {a, b}, [an, bn, os](const TensorNode& self) {
        if (an->requires_grad)
            detail::accumulate(*an, detail::reduce_to_shape(self.grad, os, an->shape));
        if (bn->requires_grad)
            detail::accumulate(*bn, detail::reduce_to_shape(self.grad, os, bn->shape));
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    const Shape os = detail::broadcast_shape(a.shape(), b.shape());
    auto data = detail::broadcast_zip(a.data(), a.shape(), b.data(), b.shape(), os,
                                      [](double x, double y) { return x - y; });
    auto an = a.node(), bn = b.node();
    return detail::make_op(os, std::move(data), {a, b}, [an, bn, os](const TensorNode& self) {
        if (an->requires_grad)
            detail::accumulate(*an, detail::reduce_to_shape(self.grad, os, an->shape));
        if (bn->requires_grad) {
            auto g = detail::reduce_to_shape(self.grad, os, bn->shape);
            for (auto& v : g) v = -v;
            detail::accumulate(*bn, g);
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    const Shape os = detail::broadcast_shape(a.shape(), b.shape());
    auto data = detail::broadcast_zip(a.data(), a.shape(), b.data(), b.shape(), os,
                                      [](double x, double y) { return x * y; });
    auto an = a.node(), bn = b.node();
    return detail::make_op(os, std::move(data), {a, b}, [an, bn, os](const TensorNode& self) {
        if (an->requires_grad) {
            auto gb = detail::broadcast_zip(self.grad, os, bn->data, bn->shape, os,
                                            [](double g, double y) { return g * y; });
            detail::accumulate(*an, detail::reduce_to_shape(gb, os, an->shape));
        }
        if (bn->requires_grad) {
            auto ga = detail::broadcast_zip(self.grad, os, an->data, an->shape, os,
                                            [](double g, double x) { return g * x; });
            detail::accumulate(*bn, detail::reduce_to_shape(ga, os, bn->shape));
        }
    });
}

inline Tensor scale(const Tensor& a, double k) {
    std::vector<double> data(a.data());
    for (auto& v : data) v *= k;
    auto an = a.node();
    return detail::make_op(a.shape(), std::move(data), {a}, [an, k](const TensorNode& self) {
        std::vector<double> g(self.grad);
        for (auto& v : g) v *= k;
        detail::accumulate(*an, g);
    });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    Shape os;
    auto data = detail::batched_matmul_raw(a.data(), a.shape(), b.data(), b.shape(), &os);
    auto an = a.node(), bn = b.node();
    return detail::make_op(os, std::move(data), {a, b}, [an, bn, os](const TensorNode& self) {
        if (an->requires_grad) {
            Shape bts;
            auto bt = detail::transpose_last_raw(bn->data, bn->shape, &bts);
            Shape gs;
            auto ga = detail::batched_matmul_raw(self.grad, os, bt, bts, &gs);
            detail::accumulate(*an, detail::reduce_to_shape(ga, gs, an->shape));
        }
        if (bn->requires_grad) {
            Shape ats;
            auto at = detail::transpose_last_raw(an->data, an->shape, &ats);
            Shape gs;
            auto gb = detail::batched_matmul_raw(at, ats, self.grad, os, &gs);
            detail::accumulate(*bn, detail::reduce_to_shape(gb, gs, bn->shape));
        }
    });
}

inline Tensor swap_axes(const Tensor& a, int i, int j) {
    Shape os;
    auto data = detail::swap_axes_raw(a.data(), a.shape(), i, j, &os);
    auto an = a.node();
    return detail::make_op(os, std::move(data), {a}, [an, os, i, j](const TensorNode& self) {
        Shape back;
        detail::accumulate(*an, detail::swap_axes_raw(self.grad, os, i, j, &back));
    });
}

inline Tensor reshape(const Tensor& a, const Shape& s) {
    if (shape_numel(s) != a.size())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(s));
    auto an = a.node();
    return detail::make_op(s, a.data(), {a}, [an](const TensorNode& self) {
        detail::accumulate(*an, self.grad);
    });
}

inline Tensor broadcast_to(const Tensor& a, const Shape& s) {
    if (detail::broadcast_shape(a.shape(), s) != s)
        throw ShapeError("broadcast_to: cannot expand " + shape_str(a.shape()) + " to " +
                         shape_str(s));
    auto data = detail::broadcast_expand(a.data(), a.shape(), s);
    auto an = a.node();
    return detail::make_op(s, std::move(data), {a}, [an, s](const TensorNode& self) {
        detail::accumulate(*an, detail::reduce_to_shape(self.grad, s, an->shape));
    });
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> data(a.data());
    for (auto& v : data) v = v > 0.0 ? v : 0.0;
    auto an = a.node();
    return detail::make_op(a.shape(), std::move(data), {a}, [an](const TensorNode& self) {
        std::vector<double> g(self.grad.size());
        for (size_t i = 0; i < g.size(); ++i) g[i] = an->data[i] > 0.0 ? self.grad[i] : 0.0;
        detail::accumulate(*an, g);
    });
}

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> data(a.data());
    for (auto& v : data) v = 1.0 / (1.0 + std::exp(-v));
    auto an = a.node();
    return detail::make_op(a.shape(), std::move(data), {a}, [an](const TensorNode& self) {
        std::vector<double> g(self.grad.size());
        for (size_t i = 0; i < g.size(); ++i) {
            const double y = self.data[i];
            g[i] = self.grad[i] * y * (1.0 - y);
        }
        detail::accumulate(*an, g);
    });
}

inline Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    auto an = a.node();
    return detail::make_op({1}, {acc}, {a}, [an](const TensorNode& self) {
        std::vector<double> g(an->data.size(), self.grad[0]);
        detail::accumulate(*an, g);
    });
}

// Concatenation along the last axis; inputs agree on all other axes.
inline Tensor concat_last(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_last: no inputs");
    const Shape& first = parts[0].shape();
    const int r = static_cast<int>(first.size());
    int total_last = 0;
    for (const auto& p : parts) {
        if (p.rank() != r ||
            !std::equal(first.begin(), first.end() - 1, p.shape().begin()))
            throw ShapeError("concat_last: mismatched shapes " + shape_str(first) + " vs " +
                             shape_str(p.shape()));
        total_last += p.shape().back();
    }
    Shape os = first;
    os.back() = total_last;
    const int lead = shape_numel(Shape(first.begin(), first.end() - 1));
    std::vector<double> data(static_cast<size_t>(lead) * total_last);
    std::vector<int> lasts;
    for (const auto& p : parts) lasts.push_back(p.shape().back());
    for (int row = 0; row < lead; ++row) {
        int off = 0;
        for (size_t pi = 0; pi < parts.size(); ++pi) {
            const int w = lasts[pi];
            const double* src = parts[pi].data().data() + static_cast<size_t>(row) * w;
            std::copy(src, src + w, data.data() + static_cast<size_t>(row) * total_last + off);
            off += w;
        }
    }
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    return detail::make_op(os, std::move(data), parts,
                           [nodes, lasts, lead, total_last](const TensorNode& self) {
        int off = 0;
        for (size_t pi = 0; pi < nodes.size(); ++pi) {
            const int w = lasts[pi];
            if (nodes[pi]->requires_grad) {
                std::vector<double> g(static_cast<size_t>(lead) * w);
                for (int row = 0; row < lead; ++row)
                    std::copy(self.grad.data() + static_cast<size_t>(row) * total_last + off,
                              self.grad.data() + static_cast<size_t>(row) * total_last + off + w,
                              g.data() + static_cast<size_t>(row) * w);
                detail::accumulate(*nodes[pi], g);
            }
            off += w;
        }
    });
}

// Slice [from, to) of the last axis.
inline Tensor slice_last(const Tensor& a, int from, int to) {
    const int last = a.shape().back();
    if (from < 0 || to > last || from >= to)
        throw ShapeError("slice_last: bad range [" + std::to_string(from) + "," +
                         std::to_string(to) + ") for shape " + shape_str(a.shape()));
    Shape os = a.shape();
    os.back() = to - from;
    const int lead = a.size() / last;
    const int w = to - from;
    std::vector<double> data(static_cast<size_t>(lead) * w);
    for (int row = 0; row < lead; ++row)
        std::copy(a.data().data() + static_cast<size_t>(row) * last + from,
                  a.data().data() + static_cast<size_t>(row) * last + to,
                  data.data() + static_cast<size_t>(row) * w);
    auto an = a.node();
    return detail::make_op(os, std::move(data), {a},
                           [an, from, w, last, lead](const TensorNode& self) {
        std::vector<double> g(an->data.size(), 0.0);
        for (int row = 0; row < lead; ++row)
            for (int j = 0; j < w; ++j)
                g[static_cast<size_t>(row) * last + from + j] +=
                    self.grad[static_cast<size_t>(row) * w + j];
        detail::accumulate(*an, g);
    });
}

// Softmax over the last axis of (logits + mask). Mask entries are 0 or -inf
// and broadcast against logits; -inf keys receive exactly zero weight and a
// fully masked row yields an all-zero row instead of NaN. An undefined mask
// means plain softmax.
inline Tensor masked_softmax(const Tensor& logits, const Tensor& mask) {
    const Shape& ls = logits.shape();
    const int width = ls.back();
    const int rows = logits.size() / width;
    // mask rows are addressed through broadcast strides, never materialized
    const int r = static_cast<int>(ls.size());
    std::vector<int> mstr;
    int mlast = 0;
    if (mask.defined()) {
        if (detail::broadcast_shape(mask.shape(), ls) != ls)
            throw ShapeError("masked_softmax: mask " + shape_str(mask.shape()) +
                             " does not broadcast to logits " + shape_str(ls));
        mstr = detail::broadcast_strides(mask.shape(), r);
        mlast = mstr.back();
    }
    const double ninf = -std::numeric_limits<double>::infinity();
    std::vector<double> out(logits.data().size(), 0.0);
    std::vector<int> idx(static_cast<size_t>(r > 0 ? r - 1 : 0), 0);
    int moff = 0;
    for (int row = 0; row < rows; ++row) {
        const size_t base = static_cast<size_t>(row) * width;
        const double* mrow = mask.defined() ? mask.data().data() + moff : nullptr;
        double mx = ninf;
        for (int j = 0; j < width; ++j) {
            const double mv = mrow ? mrow[j * mlast] : 0.0;
            if (mv == ninf) continue;
            mx = std::max(mx, logits.data()[base + j] + mv);
        }
        if (mx != ninf) {  // a fully masked row stays all-zero
            double denom = 0.0;
            for (int j = 0; j < width; ++j) {
                const double mv = mrow ? mrow[j * mlast] : 0.0;
                if (mv == ninf) continue;
                const double e = std::exp(logits.data()[base + j] + mv - mx);
                out[base + j] = e;
                denom += e;
            }
            for (int j = 0; j < width; ++j) out[base + j] /= denom;
        }
        if (mask.defined()) {  // advance the row odometer over the leading axes
            for (int axis = r - 2; axis >= 0; --axis) {
                auto ax = static_cast<size_t>(axis);
                if (++idx[ax] < ls[ax]) {
                    moff += mstr[ax];
                    break;
                }
                idx[ax] = 0;
                moff -= mstr[ax] * (ls[ax] - 1);
            }
        }
    }
    auto ln = logits.node();
    std::vector<Tensor> parents = {logits};
    if (mask.defined()) parents.push_back(mask);  // mask itself gets no gradient
    return detail::make_op(ls, std::move(out), parents,
                           [ln, rows, width](const TensorNode& self) {
        if (!ln->requires_grad) return;
        std::vector<double> g(self.grad.size());
        for (int row = 0; row < rows; ++row) {
            const size_t base = static_cast<size_t>(row) * width;
            double dot = 0.0;
            for (int j = 0; j < width; ++j) dot += self.grad[base + j] * self.data[base + j];
            for (int j = 0; j < width; ++j)
                g[base + j] = self.data[base + j] * (self.grad[base + j] - dot);
        }
        detail::accumulate(*ln, g);
    });
}

inline Tensor softmax_last(const Tensor& logits) { return masked_softmax(logits, Tensor()); }

// Per-position normalization over the last axis followed by an affine map;
// gain and bias have the last-axis length.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-6) {
    const int width = x.shape().back();
    if (gain.size() != width || bias.size() != width)
        throw ShapeError("layer_norm: gain/bias length must equal last axis of " +
                         shape_str(x.shape()));
    const int rows = x.size() / width;
    auto xhat = std::make_shared<std::vector<double>>(x.data().size());
    auto istd = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    std::vector<double> out(x.data().size());
    for (int row = 0; row < rows; ++row) {
        const size_t base = static_cast<size_t>(row) * width;
        double mu = 0.0;
        for (int j = 0; j < width; ++j) mu += x.data()[base + j];
        mu /= width;
        double var = 0.0;
        for (int j = 0; j < width; ++j) {
            const double d = x.data()[base + j] - mu;
            var += d * d;
        }
        var /= width;
        const double is = 1.0 / std::sqrt(var + eps);
        (*istd)[static_cast<size_t>(row)] = is;
        for (int j = 0; j < width; ++j) {
            const double xh = (x.data()[base + j] - mu) * is;
            (*xhat)[base + j] = xh;
            out[base + j] = gain.data()[j] * xh + bias.data()[j];
        }
    }
    auto xn = x.node(), gn = gain.node(), bn = bias.node();
    return detail::make_op(x.shape(), std::move(out), {x, gain, bias},
                           [xn, gn, bn, xhat, istd, rows, width](const TensorNode& self) {
        if (gn->requires_grad) {
            std::vector<double> gg(static_cast<size_t>(width), 0.0);
            for (int row = 0; row < rows; ++row)
                for (int j = 0; j < width; ++j)
                    gg[static_cast<size_t>(j)] +=
                        self.grad[static_cast<size_t>(row) * width + j] *
                        (*xhat)[static_cast<size_t>(row) * width + j];
            detail::accumulate(*gn, gg);
        }
        if (bn->requires_grad) {
            std::vector<double> gb(static_cast<size_t>(width), 0.0);
            for (int row = 0; row < rows; ++row)
                for (int j = 0; j < width; ++j)
                    gb[static_cast<size_t>(j)] += self.grad[static_cast<size_t>(row) * width + j];
            detail::accumulate(*bn, gb);
        }
        if (xn->requires_grad) {
            std::vector<double> gx(self.grad.size());
            for (int row = 0; row < rows; ++row) {
                const size_t base = static_cast<size_t>(row) * width;
                double m1 = 0.0, m2 = 0.0;
                for (int j = 0; j < width; ++j) {
                    const double dxh = self.grad[base + j] * gn->data[static_cast<size_t>(j)];
                    m1 += dxh;
                    m2 += dxh * (*xhat)[base + j];
                }
                m1 /= width;
                m2 /= width;
                const double is = (*istd)[static_cast<size_t>(row)];
                for (int j = 0; j < width; ++j) {
                    const double dxh = self.grad[base + j] * gn->data[static_cast<size_t>(j)];
                    gx[base + j] = is * (dxh - m1 - (*xhat)[base + j] * m2);
                }
            }
            detail::accumulate(*xn, gx);
        }
    });
}

// Inverted-scaling dropout: keep with probability 1-rate and scale kept
// values by 1/(1-rate) so evaluation needs no rescaling. Identity when not
// training or rate == 0.
inline Tensor dropout(const Tensor& x, double rate, bool train, std::mt19937_64* rng) {
    if (!train || rate <= 0.0) return x;
    if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
    if (!rng) throw std::invalid_argument("dropout: rng required in train mode");
    const double keep = 1.0 - rate;
    auto mask = std::make_shared<std::vector<double>>(x.data().size());
    std::vector<double> out(x.data().size());
    for (size_t i = 0; i < out.size(); ++i) {
        const double u = static_cast<double>((*rng)() >> 11) * 0x1.0p-53;
        const double m = u < keep ? 1.0 / keep : 0.0;
        (*mask)[i] = m;
        out[i] = x.data()[i] * m;
    }
    auto xn = x.node();
    return detail::make_op(x.shape(), std::move(out), {x}, [xn, mask](const TensorNode& self) {
        std::vector<double> g(self.grad.size());
        for (size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * (*mask)[i];
        detail::accumulate(*xn, g);
    });
}

// --- reverse pass ---------------------------------------------------------

// Accumulates d(loss)/d(t) into the grad buffer of every tensor reachable
// from `loss`. Parameters not reached keep (or lazily materialize) zeros.
inline void backward(const Tensor& loss) {
    if (loss.size() != 1)
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    // iterative post-order over the DAG
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backprop) {
            n->ensure_grad();
            n->backprop(*n);
        }
    }
}

}  // namespace dsan
