#pragma once

// Minimal dense float64 tensor with reverse-mode autodiff. Covers exactly the
// operator set the model needs; no views, no fusion, no parallel kernels.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <vector>

#include "unimove/error.hpp"

namespace unimove {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

// Plain integer array (indices, targets, token channels). Not differentiable.
struct IntArray {
    Shape shape;
    std::vector<std::int64_t> v;

    IntArray() = default;
    IntArray(Shape s, std::int64_t fill = 0) : shape(std::move(s)), v(numel(shape), fill) {}
    std::size_t size() const { return v.size(); }
};

struct BoolArray {
    Shape shape;
    std::vector<std::uint8_t> v;

    BoolArray() = default;
    explicit BoolArray(Shape s, bool fill = false)
        : shape(std::move(s)), v(numel(shape), fill ? 1 : 0) {}
    std::size_t size() const { return v.size(); }
};

constexpr double kNegInf = -1e30;  // effective -inf; exp() underflows to exact 0

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

struct TensorNode {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until first needed
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(TensorNode&)> backward_fn;
    std::uint64_t id = 0;  // creation order; the implicit tape

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }
};

inline std::uint64_t next_node_id() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
}

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape s, bool requires_grad = false) {
        return from_values(std::move(s), {}, requires_grad, 0.0);
    }
    static Tensor full(Shape s, double fill, bool requires_grad = false) {
        return from_values(std::move(s), {}, requires_grad, fill);
    }
    static Tensor constant(Shape s, std::vector<double> vals) {
        Tensor t = make(std::move(s));
        if (vals.size() != unimove::numel(t.shape()))
            throw data_error("tensor literal size mismatch for shape " + shape_str(t.shape()));
        t.node_->values = std::move(vals);
        return t;
    }
    static Tensor param(Shape s, std::vector<double> vals) {
        Tensor t = constant(std::move(s), std::move(vals));
        t.node_->requires_grad = true;
        return t;
    }
    static Tensor scalar(double v) { return constant({1}, {v}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->values.size(); }
    std::vector<double>& values() { return node_->values; }
    const std::vector<double>& values() const { return node_->values; }
    std::vector<double>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }
    void zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }

    double item() const {
        if (numel() != 1) throw data_error("item() on non-scalar tensor " + shape_str(shape()));
        return node_->values[0];
    }

    NodePtr node() const { return node_; }

    // Internal: build a result node wired to parents.
    static Tensor make_op(Shape s, std::vector<Tensor> parents,
                          std::function<void(TensorNode&)> backward_fn) {
        Tensor t = make(std::move(s));
        bool any_grad = false;
        for (auto& p : parents) {
            any_grad = any_grad || p.node_->requires_grad;
            t.node_->parents.push_back(p.node_);
        }
        if (any_grad) {
            t.node_->requires_grad = true;
            t.node_->backward_fn = std::move(backward_fn);
        }
        return t;
    }

private:
    static Tensor make(Shape s) {
        Tensor t;
        t.node_ = std::make_shared<TensorNode>();
        t.node_->shape = std::move(s);
        t.node_->id = next_node_id();
        return t;
    }
    static Tensor from_values(Shape s, std::vector<double> vals, bool requires_grad, double fill) {
        Tensor t = make(std::move(s));
        t.node_->values.assign(unimove::numel(t.node_->shape), fill);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    NodePtr node_;
};

// ---------------------------------------------------------------------------
// Broadcasting helpers (numpy alignment, right-to-left)

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1)
            throw data_error("broadcast mismatch: " + shape_str(a) + " vs " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Row-major strides of `in` aligned to broadcast rank, 0 where broadcast.
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<std::size_t> strides(out.size(), 0);
    std::size_t stride = 1;
    for (std::size_t i = 0; i < in.size(); ++i) {
        std::size_t axis = in.size() - 1 - i;            // axis in `in`
        std::size_t out_axis = out.size() - 1 - i;       // aligned axis in `out`
        strides[out_axis] = (in[axis] == 1 && out[out_axis] != 1) ? 0 : stride;
        stride *= in[axis];
    }
    return strides;
}

// Walks a broadcast output space, yielding the flat offset into one input.
class StridedIter {
public:
    StridedIter(const Shape& out, const std::vector<std::size_t>& strides)
        : out_(out), strides_(strides), coord_(out.size(), 0) {}

    std::size_t offset() const { return offset_; }

    void advance() {
        for (std::size_t i = out_.size(); i-- > 0;) {
            ++coord_[i];
            offset_ += strides_[i];
            if (coord_[i] < out_[i]) return;
            offset_ -= strides_[i] * out_[i];
            coord_[i] = 0;
        }
    }

private:
    const Shape& out_;
    const std::vector<std::size_t>& strides_;
    Shape coord_;
    std::size_t offset_ = 0;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops

namespace detail {

template <typename FwdFn, typename BwdFn>
Tensor binary_op(const Tensor& a, const Tensor& b, FwdFn fwd, BwdFn bwd) {
    Shape out_shape = broadcast_shape(a.shape(), b.shape());
    auto sa = broadcast_strides(a.shape(), out_shape);
    auto sb = broadcast_strides(b.shape(), out_shape);
    std::size_t n = numel(out_shape);

    NodePtr an = a.node(), bn = b.node();
    Tensor out = Tensor::make_op(
        out_shape, {a, b}, [an, bn, sa, sb, bwd](TensorNode& self) {
            StridedIter ia(self.shape, sa), ib(self.shape, sb);
            bool ga = an->requires_grad, gb = bn->requires_grad;
            if (ga) an->ensure_grad();
            if (gb) bn->ensure_grad();
            for (std::size_t i = 0; i < self.values.size(); ++i) {
                double g = self.grad[i];
                double av = an->values[ia.offset()], bv = bn->values[ib.offset()];
                auto [da, db] = bwd(av, bv, g);
                if (ga) an->grad[ia.offset()] += da;
                if (gb) bn->grad[ib.offset()] += db;
                ia.advance();
                ib.advance();
            }
        });
    out.values().resize(n);
    StridedIter ia(out.shape(), sa), ib(out.shape(), sb);
    for (std::size_t i = 0; i < n; ++i) {
        out.values()[i] = fwd(a.values()[ia.offset()], b.values()[ib.offset()]);
        ia.advance();
        ib.advance();
    }
    return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, [](double x, double y) { return x + y; },
        [](double, double, double g) { return std::pair<double, double>(g, g); });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, [](double x, double y) { return x - y; },
        [](double, double, double g) { return std::pair<double, double>(g, -g); });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, [](double x, double y) { return x * y; },
        [](double x, double y, double g) { return std::pair<double, double>(g * y, g * x); });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, [](double x, double y) { return x / y; },
        [](double x, double y, double g) {
            return std::pair<double, double>(g / y, -g * x / (y * y));
        });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops

namespace detail {

template <typename FwdFn, typename BwdFn>
Tensor unary_op(const Tensor& a, FwdFn fwd, BwdFn bwd) {
    NodePtr an = a.node();
    Tensor out = Tensor::make_op(a.shape(), {a}, [an, bwd](TensorNode& self) {
        an->ensure_grad();
        for (std::size_t i = 0; i < self.values.size(); ++i)
            an->grad[i] += self.grad[i] * bwd(an->values[i], self.values[i]);
    });
    out.values().resize(a.numel());
    for (std::size_t i = 0; i < a.numel(); ++i) out.values()[i] = fwd(a.values()[i]);
    return out;
}

}  // namespace detail

inline Tensor scale(const Tensor& a, double c) {
    return detail::unary_op(
        a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

inline Tensor add_const(const Tensor& a, double c) {
    return detail::unary_op(
        a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

namespace detail {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace detail

inline Tensor gelu(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * detail::kInvSqrt2)); },
        [](double x, double) {
            double cdf = 0.5 * (1.0 + std::erf(x * detail::kInvSqrt2));
            double pdf = detail::kInvSqrt2Pi * std::exp(-0.5 * x * x);
            return cdf + x * pdf;
        });
}

inline Tensor softplus(const Tensor& a) {
    auto sp = [](double x) {
        if (x > 30.0) return x;
        if (x < -30.0) return std::exp(x);
        return std::log1p(std::exp(x));
    };
    return detail::unary_op(a, sp, [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

// ---------------------------------------------------------------------------
// matmul: A[..., m, k] x B[..., k, n]; leading dims equal or absent on one side.

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() < 2 || bs.size() < 2)
        throw data_error("matmul requires rank >= 2: " + shape_str(as) + " x " + shape_str(bs));
    std::size_t m = as[as.size() - 2], k = as[as.size() - 1];
    std::size_t k2 = bs[bs.size() - 2], n = bs[bs.size() - 1];
    if (k != k2)
        throw data_error("matmul inner-dim mismatch: " + shape_str(as) + " x " + shape_str(bs));

    Shape lead_a(as.begin(), as.end() - 2), lead_b(bs.begin(), bs.end() - 2);
    std::size_t ba = numel(lead_a), bb = numel(lead_b);
    Shape lead;
    if (lead_a == lead_b) lead = lead_a;
    else if (lead_a.empty()) lead = lead_b;
    else if (lead_b.empty()) lead = lead_a;
    else
        throw data_error("matmul leading dims mismatch: " + shape_str(as) + " x " + shape_str(bs));
    std::size_t batches = numel(lead);
    bool bcast_a = lead_a.empty() && !lead.empty();
    bool bcast_b = lead_b.empty() && !lead.empty();
    (void)ba;
    (void)bb;

    Shape out_shape = lead;
    out_shape.push_back(m);
    out_shape.push_back(n);

    NodePtr an = a.node(), bn = b.node();
    Tensor out = Tensor::make_op(
        out_shape, {a, b},
        [an, bn, m, k, n, batches, bcast_a, bcast_b](TensorNode& self) {
            bool ga = an->requires_grad, gb = bn->requires_grad;
            if (ga) an->ensure_grad();
            if (gb) bn->ensure_grad();
            for (std::size_t bidx = 0; bidx < batches; ++bidx) {
                const double* A = an->values.data() + (bcast_a ? 0 : bidx * m * k);
                const double* B = bn->values.data() + (bcast_b ? 0 : bidx * k * n);
                const double* G = self.grad.data() + bidx * m * n;
                if (ga) {
                    double* dA = an->grad.data() + (bcast_a ? 0 : bidx * m * k);
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) {
                            double g = G[i * n + j];
                            if (g == 0.0) continue;
                            const double* Brow = B + j;
                            for (std::size_t p = 0; p < k; ++p)
                                dA[i * k + p] += g * Brow[p * n];
                        }
                }
                if (gb) {
                    double* dB = bn->grad.data() + (bcast_b ? 0 : bidx * k * n);
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                            double av = A[i * k + p];
                            if (av == 0.0) continue;
                            const double* Grow = G + i * n;
                            double* dBrow = dB + p * n;
                            for (std::size_t j = 0; j < n; ++j) dBrow[j] += av * Grow[j];
                        }
                }
            }
        });
    out.values().assign(batches * m * n, 0.0);
    for (std::size_t bidx = 0; bidx < batches; ++bidx) {
        const double* A = a.values().data() + (bcast_a ? 0 : bidx * m * k);
        const double* B = b.values().data() + (bcast_b ? 0 : bidx * k * n);
        double* C = out.values().data() + bidx * m * n;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                double av = A[i * k + p];
                if (av == 0.0) continue;
                const double* Brow = B + p * n;
                double* Crow = C + i * n;
                for (std::size_t j = 0; j < n; ++j) Crow[j] += av * Brow[j];
            }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape ops

inline Tensor reshape(const Tensor& a, Shape s) {
    if (numel(s) != a.numel())
        throw data_error("reshape " + shape_str(a.shape()) + " -> " + shape_str(s));
    NodePtr an = a.node();
    Tensor out = Tensor::make_op(std::move(s), {a}, [an](TensorNode& self) {
        an->ensure_grad();
        for (std::size_t i = 0; i < self.values.size(); ++i) an->grad[i] += self.grad[i];
    });
    out.values() = a.values();
    return out;
}

namespace detail {

inline void transpose_copy(const Shape& in_shape, std::size_t ax1, std::size_t ax2,
                           const double* src, double* dst, bool add_into) {
    Shape out_shape = in_shape;
    std::swap(out_shape[ax1], out_shape[ax2]);
    std::size_t rank = in_shape.size();
    std::vector<std::size_t> in_strides(rank, 1);
    for (std::size_t i = rank - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    // out coordinate -> in offset, with axes ax1/ax2 swapped
    std::vector<std::size_t> strides(rank);
    for (std::size_t i = 0; i < rank; ++i) strides[i] = in_strides[i];
    std::swap(strides[ax1], strides[ax2]);
    StridedIter it(out_shape, strides);
    std::size_t n = numel(out_shape);
    for (std::size_t i = 0; i < n; ++i) {
        if (add_into) dst[it.offset()] += src[i];  // note: used for backward (dst=in grad)
        else dst[i] = src[it.offset()];
        it.advance();
    }
}

}  // namespace detail

inline Tensor transpose(const Tensor& a, std::size_t ax1, std::size_t ax2) {
    const Shape& s = a.shape();
    if (ax1 >= s.size() || ax2 >= s.size()) throw data_error("transpose axis out of range");
    Shape out_shape = s;
    std::swap(out_shape[ax1], out_shape[ax2]);
    NodePtr an = a.node();
    Tensor out = Tensor::make_op(out_shape, {a}, [an, ax1, ax2](TensorNode& self) {
        an->ensure_grad();
        detail::transpose_copy(an->shape, ax1, ax2, self.grad.data(), an->grad.data(), true);
    });
    out.values().resize(a.numel());
    detail::transpose_copy(s, ax1, ax2, a.values().data(), out.values().data(), false);
    return out;
}

// 2-D transpose shorthand.
inline Tensor transpose(const Tensor& a) {
    return transpose(a, a.shape().size() - 2, a.shape().size() - 1);
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw data_error("concat of zero tensors");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) throw data_error("concat axis out of range");
    Shape out_shape = s0;
    std::size_t total_axis = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size()) throw data_error("concat rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != s0[i])
                throw data_error("concat shape mismatch: " + shape_str(s0) + " vs " + shape_str(s));
        total_axis += s[axis];
    }
    out_shape[axis] = total_axis;

    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
    for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];

    std::vector<NodePtr> nodes;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        nodes.push_back(p.node());
        widths.push_back(p.shape()[axis] * inner);
    }
    std::size_t row = total_axis * inner;

    Tensor out = Tensor::make_op(out_shape, parts, [nodes, widths, outer, row](TensorNode& self) {
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
            if (nodes[pi]->requires_grad) {
                nodes[pi]->ensure_grad();
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t j = 0; j < widths[pi]; ++j)
                        nodes[pi]->grad[o * widths[pi] + j] += self.grad[o * row + off + j];
            }
            off += widths[pi];
        }
    });
    out.values().resize(outer * row);
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const auto& vals = parts[pi].values();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < widths[pi]; ++j)
                out.values()[o * row + off + j] = vals[o * widths[pi] + j];
        off += widths[pi];
    }
    return out;
}

inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len) {
    const Shape& s = a.shape();
    if (axis >= s.size()) throw data_error("slice axis out of range");
    if (start + len > s[axis])
        throw data_error("slice [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of range for axis extent " + std::to_string(s[axis]));
    Shape out_shape = s;
    out_shape[axis] = len;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    std::size_t in_row = s[axis] * inner, out_row = len * inner, off = start * inner;

    NodePtr an = a.node();
    Tensor out =
        Tensor::make_op(out_shape, {a}, [an, outer, in_row, out_row, off](TensorNode& self) {
            an->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t j = 0; j < out_row; ++j)
                    an->grad[o * in_row + off + j] += self.grad[o * out_row + j];
        });
    out.values().resize(outer * out_row);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < out_row; ++j)
            out.values()[o * out_row + j] = a.values()[o * in_row + off + j];
    return out;
}

// ---------------------------------------------------------------------------
// Softmax family (last axis)

inline Tensor softmax(const Tensor& a) {
    std::size_t d = a.shape().back();
    std::size_t rows = a.numel() / d;
    NodePtr an = a.node();
    Tensor out = Tensor::make_op(a.shape(), {a}, [an, d, rows](TensorNode& self) {
        an->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.values.data() + r * d;
            const double* g = self.grad.data() + r * d;
            double dot = 0.0;
            for (std::size_t i = 0; i < d; ++i) dot += y[i] * g[i];
            double* da = an->grad.data() + r * d;
            for (std::size_t i = 0; i < d; ++i) da[i] += y[i] * (g[i] - dot);
        }
    });
    out.values().resize(a.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.values().data() + r * d;
        double* y = out.values().data() + r * d;
        double mx = x[0];
        for (std::size_t i = 1; i < d; ++i) mx = std::max(mx, x[i]);
        double sum = 0.0;
        for (std::size_t i = 0; i < d; ++i) sum += (y[i] = std::exp(x[i] - mx));
        for (std::size_t i = 0; i < d; ++i) y[i] /= sum;
    }
    return out;
}

inline Tensor log_softmax(const Tensor& a) {
    std::size_t d = a.shape().back();
    std::size_t rows = a.numel() / d;
    NodePtr an = a.node();
    Tensor out = Tensor::make_op(a.shape(), {a}, [an, d, rows](TensorNode& self) {
        an->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.values.data() + r * d;
            const double* g = self.grad.data() + r * d;
            double gsum = 0.0;
            for (std::size_t i = 0; i < d; ++i) gsum += g[i];
            double* da = an->grad.data() + r * d;
            for (std::size_t i = 0; i < d; ++i) da[i] += g[i] - std::exp(y[i]) * gsum;
        }
    });
    out.values().resize(a.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.values().data() + r * d;
        double* y = out.values().data() + r * d;
        double mx = x[0];
        for (std::size_t i = 1; i < d; ++i) mx = std::max(mx, x[i]);
        double sum = 0.0;
        for (std::size_t i = 0; i < d; ++i) sum += std::exp(x[i] - mx);
        double lse = mx + std::log(sum);
        for (std::size_t i = 0; i < d; ++i) y[i] = x[i] - lse;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a, std::size_t axis, bool keepdim = false) {
    const Shape& s = a.shape();
    if (axis >= s.size()) throw data_error("sum axis out of range");
    std::size_t outer = 1, inner = 1, ax = s[axis];
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    Shape out_shape;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i == axis) {
            if (keepdim) out_shape.push_back(1);
        } else {
            out_shape.push_back(s[i]);
        }
    }
    if (out_shape.empty()) out_shape.push_back(1);

    NodePtr an = a.node();
    Tensor out = Tensor::make_op(out_shape, {a}, [an, outer, inner, ax](TensorNode& self) {
        an->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t k = 0; k < ax; ++k)
                for (std::size_t j = 0; j < inner; ++j)
                    an->grad[(o * ax + k) * inner + j] += self.grad[o * inner + j];
    });
    out.values().assign(outer * inner, 0.0);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < ax; ++k)
            for (std::size_t j = 0; j < inner; ++j)
                out.values()[o * inner + j] += a.values()[(o * ax + k) * inner + j];
    return out;
}

inline Tensor mean(const Tensor& a, std::size_t axis, bool keepdim = false) {
    return scale(sum(a, axis, keepdim), 1.0 / static_cast<double>(a.shape()[axis]));
}

inline Tensor sum_all(const Tensor& a) {
    NodePtr an = a.node();
    Tensor out = Tensor::make_op({1}, {a}, [an](TensorNode& self) {
        an->ensure_grad();
        for (double& g : an->grad) g += self.grad[0];
    });
    out.values().assign(1, std::accumulate(a.values().begin(), a.values().end(), 0.0));
    return out;
}

inline Tensor mean_all(const Tensor& a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

// ---------------------------------------------------------------------------
// Lookup / masking / gather

inline Tensor embedding_lookup(const Tensor& table, const IntArray& idx) {
    const Shape& ts = table.shape();
    if (ts.size() != 2) throw data_error("embedding table must be rank 2");
    std::size_t vocab = ts[0], d = ts[1];
    for (auto i : idx.v)
        if (i < 0 || static_cast<std::size_t>(i) >= vocab)
            throw data_error("embedding index " + std::to_string(i) + " out of range [0," +
                             std::to_string(vocab) + ")");
    Shape out_shape = idx.shape;
    out_shape.push_back(d);

    NodePtr tn = table.node();
    auto indices = idx.v;
    Tensor out = Tensor::make_op(out_shape, {table}, [tn, indices, d](TensorNode& self) {
        tn->ensure_grad();
        for (std::size_t r = 0; r < indices.size(); ++r) {
            double* dst = tn->grad.data() + static_cast<std::size_t>(indices[r]) * d;
            const double* src = self.grad.data() + r * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
    out.values().resize(idx.size() * d);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const double* src = table.values().data() + static_cast<std::size_t>(idx.v[r]) * d;
        std::copy(src, src + d, out.values().data() + r * d);
    }
    return out;
}

// Where mask is true, output = value (gradient blocked); elsewhere passthrough.
// Mask broadcasts against the tensor.
inline Tensor masked_fill(const Tensor& a, const BoolArray& mask, double value) {
    Shape out_shape = detail::broadcast_shape(a.shape(), mask.shape);
    if (out_shape != a.shape())
        throw data_error("masked_fill mask " + shape_str(mask.shape) +
                         " does not broadcast onto tensor " + shape_str(a.shape()));
    auto ms = detail::broadcast_strides(mask.shape, out_shape);
    NodePtr an = a.node();
    auto mv = mask.v;
    Tensor out = Tensor::make_op(out_shape, {a}, [an, mv, ms](TensorNode& self) {
        an->ensure_grad();
        detail::StridedIter im(self.shape, ms);
        for (std::size_t i = 0; i < self.values.size(); ++i) {
            if (!mv[im.offset()]) an->grad[i] += self.grad[i];
            im.advance();
        }
    });
    out.values().resize(a.numel());
    detail::StridedIter im(out.shape(), ms);
    for (std::size_t i = 0; i < a.numel(); ++i) {
        out.values()[i] = mask.v[im.offset()] ? value : a.values()[i];
        im.advance();
    }
    return out;
}

struct TopkResult {
    Tensor values;     // selected entries passthrough, the rest kNegInf
    IntArray indices;  // [..., k] selected indices, ascending
};

// Top-k along the last axis. Ties broken by ascending index. Gradient flows
// only through the selected entries.
inline TopkResult topk_mask(const Tensor& a, std::size_t k) {
    std::size_t d = a.shape().back();
    if (k < 1 || k > d)
        throw data_error("topk k=" + std::to_string(k) + " out of range for axis extent " +
                         std::to_string(d));
    std::size_t rows = a.numel() / d;
    Shape idx_shape = a.shape();
    idx_shape.back() = k;
    IntArray indices(idx_shape);
    std::vector<std::uint8_t> selected(a.numel(), 0);

    std::vector<std::size_t> order(d);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.values().data() + r * d;
        std::iota(order.begin(), order.end(), 0);
        std::partial_sort(order.begin(), order.begin() + k, order.end(),
                          [x](std::size_t i, std::size_t j) {
                              if (x[i] != x[j]) return x[i] > x[j];
                              return i < j;
                          });
        std::sort(order.begin(), order.begin() + k);
        for (std::size_t i = 0; i < k; ++i) {
            indices.v[r * k + i] = static_cast<std::int64_t>(order[i]);
            selected[r * d + order[i]] = 1;
        }
    }

    NodePtr an = a.node();
    Tensor out = Tensor::make_op(a.shape(), {a}, [an, selected](TensorNode& self) {
        an->ensure_grad();
        for (std::size_t i = 0; i < self.values.size(); ++i)
            if (selected[i]) an->grad[i] += self.grad[i];
    });
    out.values().resize(a.numel());
    for (std::size_t i = 0; i < a.numel(); ++i)
        out.values()[i] = selected[i] ? a.values()[i] : kNegInf;
    return {out, indices};
}

// Picks logp[..., target] per row; rows with target == ignore yield 0.
inline Tensor gather_last(const Tensor& logp, const IntArray& targets,
                          std::int64_t ignore = -1) {
    std::size_t d = logp.shape().back();
    std::size_t rows = logp.numel() / d;
    if (targets.size() != rows)
        throw data_error("gather_last targets " + shape_str(targets.shape) +
                         " do not match rows of " + shape_str(logp.shape()));
    Shape out_shape(logp.shape().begin(), logp.shape().end() - 1);
    if (out_shape.empty()) out_shape.push_back(1);

    NodePtr ln = logp.node();
    auto tv = targets.v;
    Tensor out = Tensor::make_op(out_shape, {logp}, [ln, tv, d, ignore](TensorNode& self) {
        ln->ensure_grad();
        for (std::size_t r = 0; r < tv.size(); ++r)
            if (tv[r] != ignore)
                ln->grad[r * d + static_cast<std::size_t>(tv[r])] += self.grad[r];
    });
    out.values().resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        std::int64_t t = targets.v[r];
        if (t == ignore) {
            out.values()[r] = 0.0;
            continue;
        }
        if (t < 0 || static_cast<std::size_t>(t) >= d)
            throw data_error("gather_last target " + std::to_string(t) + " out of range");
        out.values()[r] = logp.values()[r * d + static_cast<std::size_t>(t)];
    }
    return out;
}

// Layer normalization over the last axis with learnable gain/bias (length d).
inline Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    std::size_t d = a.shape().back();
    if (gain.numel() != d || bias.numel() != d)
        throw data_error("layer_norm gain/bias must have length " + std::to_string(d));
    std::size_t rows = a.numel() / d;

    std::vector<double> mu(rows), rstd(rows), xhat(a.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.values().data() + r * d;
        double m = 0.0;
        for (std::size_t i = 0; i < d; ++i) m += x[i];
        m /= d;
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) var += (x[i] - m) * (x[i] - m);
        var /= d;
        mu[r] = m;
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < d; ++i) xhat[r * d + i] = (x[i] - m) * rstd[r];
    }

    NodePtr an = a.node(), gn = gain.node(), bn = bias.node();
    Tensor out = Tensor::make_op(
        a.shape(), {a, gain, bias}, [an, gn, bn, rstd, xhat, d, rows](TensorNode& self) {
            bool ga = an->requires_grad;
            if (ga) an->ensure_grad();
            if (gn->requires_grad) gn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* g = self.grad.data() + r * d;
                const double* xh = xhat.data() + r * d;
                if (gn->requires_grad)
                    for (std::size_t i = 0; i < d; ++i) gn->grad[i] += g[i] * xh[i];
                if (bn->requires_grad)
                    for (std::size_t i = 0; i < d; ++i) bn->grad[i] += g[i];
                if (ga) {
                    // dL/dx = rstd * (gy - mean(gy) - xhat * mean(gy*xhat)),
                    // with gy = g * gain
                    double mean_gy = 0.0, mean_gyx = 0.0;
                    for (std::size_t i = 0; i < d; ++i) {
                        double gy = g[i] * gn->values[i];
                        mean_gy += gy;
                        mean_gyx += gy * xh[i];
                    }
                    mean_gy /= d;
                    mean_gyx /= d;
                    double* da = an->grad.data() + r * d;
                    for (std::size_t i = 0; i < d; ++i) {
                        double gy = g[i] * gn->values[i];
                        da[i] += rstd[r] * (gy - mean_gy - xh[i] * mean_gyx);
                    }
                }
            }
        });
    out.values().resize(a.numel());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < d; ++i)
            out.values()[r * d + i] = xhat[r * d + i] * gain.values()[i] + bias.values()[i];
    return out;
}

// ---------------------------------------------------------------------------
// Reverse pass

// Walks the recorded graph from `loss` in reverse creation order, visiting
// each node exactly once. Gradients accumulate; callers reset between steps.
inline void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw data_error("backward requires a scalar loss");
    if (!loss.requires_grad()) return;

    std::vector<NodePtr> reachable;
    std::unordered_set<TensorNode*> seen;
    std::vector<NodePtr> stack{loss.node()};
    while (!stack.empty()) {
        NodePtr n = stack.back();
        stack.pop_back();
        if (!seen.insert(n.get()).second) continue;
        reachable.push_back(n);
        for (auto& p : n->parents)
            if (p->requires_grad) stack.push_back(p);
    }
    std::sort(reachable.begin(), reachable.end(),
              [](const NodePtr& a, const NodePtr& b) { return a->id > b->id; });

    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (auto& n : reachable) {
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

}  // namespace unimove
