#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "treematch/errors.hpp"
#include "treematch/tensor.hpp"

// Dense-tensor op set with reverse-mode derivatives: exactly what the model
// needs (slot updates, transformer encoder, beam attention, prediction head,
// losses) and nothing more. Every op validates shapes up front and registers
// one backward step on the graph when an input requires gradients.
//
// Mask convention: mask[i] != 0 means position i is valid (attended / pooled).

namespace treematch::ad {

using Mask = std::vector<std::uint8_t>;

namespace detail {

template <typename S>
bool wants_grad(const Graph<S>& g, std::initializer_list<const Tensor<S>*> ins) {
    if (!g.recording()) return false;
    for (const Tensor<S>* t : ins) {
        if (t->requires_grad()) return true;
    }
    return false;
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(Graph<S>& g, Tensor<S> a, Tensor<S> b) {
    detail::require(a.shape() == b.shape(),
                    "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<S> out_v(a.numel());
    for (std::size_t i = 0; i < out_v.size(); ++i) out_v[i] = a.at(i) + b.at(i);
    auto out = Tensor<S>::from_values(a.shape(), std::move(out_v));
    if (detail::wants_grad(g, {&a, &b})) {
        out.set_requires_grad(true);
        g.record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            auto og = out.grad();
            if (a.requires_grad()) {
                a.ensure_grad();
                auto ag = a.grad_mut();
                for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                auto bg = b.grad_mut();
                for (std::size_t i = 0; i < og.size(); ++i) bg[i] += og[i];
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> sub(Graph<S>& g, Tensor<S> a, Tensor<S> b) {
    detail::require(a.shape() == b.shape(),
                    "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<S> out_v(a.numel());
    for (std::size_t i = 0; i < out_v.size(); ++i) out_v[i] = a.at(i) - b.at(i);
    auto out = Tensor<S>::from_values(a.shape(), std::move(out_v));
    if (detail::wants_grad(g, {&a, &b})) {
        out.set_requires_grad(true);
        g.record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            auto og = out.grad();
            if (a.requires_grad()) {
                a.ensure_grad();
                auto ag = a.grad_mut();
                for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                auto bg = b.grad_mut();
                for (std::size_t i = 0; i < og.size(); ++i) bg[i] -= og[i];
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> mul(Graph<S>& g, Tensor<S> a, Tensor<S> b) {
    detail::require(a.shape() == b.shape(),
                    "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<S> out_v(a.numel());
    for (std::size_t i = 0; i < out_v.size(); ++i) out_v[i] = a.at(i) * b.at(i);
    auto out = Tensor<S>::from_values(a.shape(), std::move(out_v));
    if (detail::wants_grad(g, {&a, &b})) {
        out.set_requires_grad(true);
        g.record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            auto og = out.grad();
            if (a.requires_grad()) {
                a.ensure_grad();
                auto ag = a.grad_mut();
                for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i] * b.at(i);
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                auto bg = b.grad_mut();
                for (std::size_t i = 0; i < og.size(); ++i) bg[i] += og[i] * a.at(i);
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> div(Graph<S>& g, Tensor<S> a, Tensor<S> b) {
    detail::require(a.shape() == b.shape(),
                    "div: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<S> out_v(a.numel());
    for (std::size_t i = 0; i < out_v.size(); ++i) out_v[i] = a.at(i) / b.at(i);
    auto out = Tensor<S>::from_values(a.shape(), std::move(out_v));
    if (detail::wants_grad(g, {&a, &b})) {
        out.set_requires_grad(true);
        g.record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            auto og = out.grad();
            if (a.requires_grad()) {
                a.ensure_grad();
                auto ag = a.grad_mut();
                for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i] / b.at(i);
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                auto bg = b.grad_mut();
                for (std::size_t i = 0; i < og.size(); ++i)
                    bg[i] -= og[i] * a.at(i) / (b.at(i) * b.at(i));
            }
        });
    }
    return out;
}

// out = a * c for a constant c.
template <typename S>
Tensor<S> scale(Graph<S>& g, Tensor<S> a, S c) {
    std::vector<S> out_v(a.numel());
    for (std::size_t i = 0; i < out_v.size(); ++i) out_v[i] = a.at(i) * c;
    auto out = Tensor<S>::from_values(a.shape(), std::move(out_v));
    if (detail::wants_grad(g, {&a})) {
        out.set_requires_grad(true);
        g.record([a, out, c]() mutable {
            if (!out.has_grad()) return;
            auto og = out.grad();
            a.ensure_grad();
            auto ag = a.grad_mut();
            for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i] * c;
        });
    }
    return out;
}

// out = a + c for a constant c.
template <typename S>
Tensor<S> add_scalar(Graph<S>& g, Tensor<S> a, S c) {
    std::vector<S> out_v(a.numel());
    for (std::size_t i = 0; i < out_v.size(); ++i) out_v[i] = a.at(i) + c;
    auto out = Tensor<S>::from_values(a.shape(), std::move(out_v));
    if (detail::wants_grad(g, {&a})) {
        out.set_requires_grad(true);
        g.record([a, out]() mutable {
            if (!out.has_grad()) return;
            auto og = out.grad();
            a.ensure_grad();
            auto ag = a.grad_mut();
            for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
        });
    }
    return out;
}

// out = s * a where s is a one-element tensor (both sides differentiable).
template <typename S>
Tensor<S> smul(Graph<S>& g, Tensor<S> s, Tensor<S> a) {
    detail::require(s.numel() == 1, "smul: scale must be a one-element tensor");
    const S sv = s.at(0);
    std::vector<S> out_v(a.numel());
    for (std::size_t i = 0; i < out_v.size(); ++i) out_v[i] = sv * a.at(i);
    auto out = Tensor<S>::from_values(a.shape(), std::move(out_v));
    if (detail::wants_grad(g, {&s, &a})) {
        out.set_requires_grad(true);
        g.record([s, a, out, sv]() mutable {
            if (!out.has_grad()) return;
            auto og = out.grad();
            if (s.requires_grad()) {
                s.ensure_grad();
                S acc = 0;
                for (std::size_t i = 0; i < og.size(); ++i) acc += og[i] * a.at(i);
                s.grad_mut()[0] += acc;
            }
            if (a.requires_grad()) {
                a.ensure_grad();
                auto ag = a.grad_mut();
                for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i] * sv;
            }
        });
    }
    return out;
}

// Adds a vector to every row of a matrix.
template <typename S>
Tensor<S> add_rowvec(Graph<S>& g, Tensor<S> m, Tensor<S> v) {
    detail::require(m.rank() == 2 && v.rank() == 1 && m.dim(1) == v.dim(0),
                    "add_rowvec: need (r x c) and (c), got " + shape_str(m.shape()) + " and " +
                        shape_str(v.shape()));
    const std::size_t rows = m.dim(0), cols = m.dim(1);
    std::vector<S> out_v(m.numel());
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out_v[i * cols + j] = m.at(i, j) + v.at(j);
    auto out = Tensor<S>::from_values(m.shape(), std::move(out_v));
    if (detail::wants_grad(g, {&m, &v})) {
        out.set_requires_grad(true);
        g.record([m, v, out, rows, cols]() mutable {
            if (!out.has_grad()) return;
            auto og = out.grad();
            if (m.requires_grad()) {
                m.ensure_grad();
                auto mg = m.grad_mut();
                for (std::size_t i = 0; i < og.size(); ++i) mg[i] += og[i];
            }
            if (v.requires_grad()) {
                v.ensure_grad();
                auto vg = v.grad_mut();
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < cols; ++j) vg[j] += og[i * cols + j];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

namespace detail {

// Normalizes matmul operands: 1-D lhs acts as a 1 x k row, 1-D rhs as a k x 1
// column, and the corresponding output axis is squeezed away.
struct MatView {
    std::size_t rows, cols;
    bool squeezed;
};

}  // namespace detail

template <typename S>
Tensor<S> matmul(Graph<S>& g, Tensor<S> a, Tensor<S> b) {
    detail::require(a.rank() >= 1 && a.rank() <= 2 && b.rank() >= 1 && b.rank() <= 2,
                    "matmul: operands must be rank 1 or 2");
    detail::require(a.rank() == 2 || b.rank() == 2, "matmul: use dot for two vectors");
    detail::MatView av{a.rank() == 2 ? a.dim(0) : 1, a.rank() == 2 ? a.dim(1) : a.dim(0),
                       a.rank() == 1};
    detail::MatView bv{b.rank() == 2 ? b.dim(0) : b.dim(0), b.rank() == 2 ? b.dim(1) : 1,
                       b.rank() == 1};
    detail::require(av.cols == bv.rows, "matmul: inner dimensions differ, " +
                                            shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t m = av.rows, k = av.cols, n = bv.cols;

    std::vector<S> out_v(m * n, S(0));
    {
        auto pa = a.values();
        auto pb = b.values();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
                const S aip = pa[i * k + p];
                if (aip == S(0)) continue;
                const S* brow = pb.data() + p * n;
                S* orow = out_v.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
            }
        }
    }

    Shape out_shape;
    if (!av.squeezed) out_shape.push_back(m);
    if (!bv.squeezed) out_shape.push_back(n);
    auto out = Tensor<S>::from_values(std::move(out_shape), std::move(out_v));

    if (detail::wants_grad(g, {&a, &b})) {
        out.set_requires_grad(true);
        g.record([a, b, out, m, k, n]() mutable {
            if (!out.has_grad()) return;
            auto og = out.grad();
            if (a.requires_grad()) {
                a.ensure_grad();
                auto ag = a.grad_mut();
                auto pb = b.values();
                // dA = dC * B^T
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        S acc = 0;
                        for (std::size_t j = 0; j < n; ++j) acc += og[i * n + j] * pb[p * n + j];
                        ag[i * k + p] += acc;
                    }
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                auto bg = b.grad_mut();
                auto pa = a.values();
                // dB = A^T * dC
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t i = 0; i < m; ++i) {
                        const S aip = pa[i * k + p];
                        if (aip == S(0)) continue;
                        for (std::size_t j = 0; j < n; ++j) bg[p * n + j] += aip * og[i * n + j];
                    }
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> transpose(Graph<S>& g, Tensor<S> a) {
    detail::require(a.rank() == 2, "transpose: need a matrix, got " + shape_str(a.shape()));
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    std::vector<S> out_v(a.numel());
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out_v[j * rows + i] = a.at(i, j);
    auto out = Tensor<S>::from_values({cols, rows}, std::move(out_v));
    if (detail::wants_grad(g, {&a})) {
        out.set_requires_grad(true);
        g.record([a, out, rows, cols]() mutable {
            if (!out.has_grad()) return;
            auto og = out.grad();
            a.ensure_grad();
            auto ag = a.grad_mut();
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) ag[i * cols + j] += og[j * rows + i];
        });
    }
    return out;
}

template <typename S>
Tensor<S> dot(Graph<S>& g, Tensor<S> a, Tensor<S> b) {
    detail::require(a.rank() == 1 && b.rank() == 1 && a.dim(0) == b.dim(0),
                    "dot: need equal-length vectors, got " + shape_str(a.shape()) + " and " +
                        shape_str(b.shape()));
    S acc = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a.at(i) * b.at(i);
    auto out = Tensor<S>::scalar(acc);
    if (detail::wants_grad(g, {&a, &b})) {
        out.set_requires_grad(true);
        g.record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            const S og = out.grad()[0];
            if (a.requires_grad()) {
                a.ensure_grad();
                auto ag = a.grad_mut();
                for (std::size_t i = 0; i < ag.size(); ++i) ag[i] += og * b.at(i);
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                auto bg = b.grad_mut();
                for (std::size_t i = 0; i < bg.size(); ++i) bg[i] += og * a.at(i);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// nonlinearities
// ---------------------------------------------------------------------------

namespace detail {

template <typename S, typename Fwd, typename Bwd>
Tensor<S> unary(Graph<S>& g, Tensor<S> a, Fwd fwd, Bwd dfn) {
    std::vector<S> out_v(a.numel());
    for (std::size_t i = 0; i < out_v.size(); ++i) out_v[i] = fwd(a.at(i));
    auto out = Tensor<S>::from_values(a.shape(), std::move(out_v));
    if (wants_grad(g, {&a})) {
        out.set_requires_grad(true);
        g.record([a, out, dfn]() mutable {
            if (!out.has_grad()) return;
            auto og = out.grad();
            a.ensure_grad();
            auto ag = a.grad_mut();
            for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i] * dfn(a.at(i), out.at(i));
        });
    }
    return out;
}

}  // namespace detail

template <typename S>
Tensor<S> sigmoid(Graph<S>& g, Tensor<S> a) {
    return detail::unary(
        g, a, [](S x) { return S(1) / (S(1) + std::exp(-x)); },
        [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Tensor<S> tanh(Graph<S>& g, Tensor<S> a) {
    return detail::unary(
        g, a, [](S x) { return std::tanh(x); }, [](S, S y) { return S(1) - y * y; });
}

template <typename S>
Tensor<S> relu(Graph<S>& g, Tensor<S> a) {
    return detail::unary(
        g, a, [](S x) { return x > S(0) ? x : S(0); },
        [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> log(Graph<S>& g, Tensor<S> a) {
    return detail::unary(
        g, a, [](S x) { return std::log(x); }, [](S x, S) { return S(1) / x; });
}

template <typename S>
Tensor<S> sqrt(Graph<S>& g, Tensor<S> a) {
    return detail::unary(
        g, a, [](S x) { return std::sqrt(x); }, [](S, S y) { return S(1) / (S(2) * y); });
}

// Subgradient passes through where the input was not clamped.
template <typename S>
Tensor<S> clamp_min(Graph<S>& g, Tensor<S> a, S lo) {
    return detail::unary(
        g, a, [lo](S x) { return x < lo ? lo : x; },
        [lo](S x, S) { return x >= lo ? S(1) : S(0); });
}

// ---------------------------------------------------------------------------
// reductions and rearrangement
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum(Graph<S>& g, Tensor<S> a) {
    S acc = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a.at(i);
    auto out = Tensor<S>::scalar(acc);
    if (detail::wants_grad(g, {&a})) {
        out.set_requires_grad(true);
        g.record([a, out]() mutable {
            if (!out.has_grad()) return;
            const S og = out.grad()[0];
            a.ensure_grad();
            auto ag = a.grad_mut();
            for (std::size_t i = 0; i < ag.size(); ++i) ag[i] += og;
        });
    }
    return out;
}

template <typename S>
Tensor<S> pick(Graph<S>& g, Tensor<S> a, std::size_t index) {
    detail::require(a.rank() == 1 && index < a.dim(0), "pick: index out of range");
    auto out = Tensor<S>::scalar(a.at(index));
    if (detail::wants_grad(g, {&a})) {
        out.set_requires_grad(true);
        g.record([a, out, index]() mutable {
            if (!out.has_grad()) return;
            a.ensure_grad();
            a.grad_mut()[index] += out.grad()[0];
        });
    }
    return out;
}

// Concatenates rank-0/1 tensors into one vector.
template <typename S>
Tensor<S> concat(Graph<S>& g, std::vector<Tensor<S>> parts) {
    detail::require(!parts.empty(), "concat: no inputs");
    std::size_t total = 0;
    bool any_grad = false;
    for (const auto& p : parts) {
        detail::require(p.rank() <= 1, "concat: parts must be scalars or vectors");
        total += p.numel();
        any_grad = any_grad || p.requires_grad();
    }
    std::vector<S> out_v;
    out_v.reserve(total);
    for (const auto& p : parts)
        for (std::size_t i = 0; i < p.numel(); ++i) out_v.push_back(p.at(i));
    auto out = Tensor<S>::from_values({total}, std::move(out_v));
    if (g.recording() && any_grad) {
        out.set_requires_grad(true);
        g.record([parts, out]() mutable {
            if (!out.has_grad()) return;
            auto og = out.grad();
            std::size_t off = 0;
            for (auto& p : parts) {
                if (p.requires_grad()) {
                    p.ensure_grad();
                    auto pg = p.grad_mut();
                    for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += og[off + i];
                }
                off += p.numel();
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax family
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> softmax(Graph<S>& g, Tensor<S> a) {
    detail::require(a.rank() == 1 && a.dim(0) > 0, "softmax: need a non-empty vector");
    const std::size_t n = a.dim(0);
    std::vector<S> out_v(n);
    S mx = a.at(0);
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, a.at(i));
    S denom = 0;
    for (std::size_t i = 0; i < n; ++i) {
        out_v[i] = std::exp(a.at(i) - mx);
        denom += out_v[i];
    }
    for (std::size_t i = 0; i < n; ++i) out_v[i] /= denom;
    auto out = Tensor<S>::from_values(a.shape(), std::move(out_v));
    if (detail::wants_grad(g, {&a})) {
        out.set_requires_grad(true);
        g.record([a, out]() mutable {
            if (!out.has_grad()) return;
            auto og = out.grad();
            a.ensure_grad();
            auto ag = a.grad_mut();
            S inner = 0;
            for (std::size_t i = 0; i < og.size(); ++i) inner += og[i] * out.at(i);
            for (std::size_t i = 0; i < og.size(); ++i)
                ag[i] += out.at(i) * (og[i] - inner);
        });
    }
    return out;
}

// Row-wise softmax over the unmasked columns of a matrix; masked columns get
// weight 0 and receive no gradient.
template <typename S>
Tensor<S> masked_softmax_rows(Graph<S>& g, Tensor<S> m, const Mask& col_mask) {
    detail::require(m.rank() == 2, "masked_softmax_rows: need a matrix");
    detail::require(col_mask.size() == m.dim(1), "masked_softmax_rows: mask length mismatch");
    std::size_t valid = 0;
    for (auto b : col_mask) valid += (b != 0);
    if (valid == 0) throw DegenerateInputError("masked_softmax_rows: all columns masked");

    const std::size_t rows = m.dim(0), cols = m.dim(1);
    std::vector<S> out_v(m.numel(), S(0));
    for (std::size_t i = 0; i < rows; ++i) {
        S mx = -std::numeric_limits<S>::infinity();
        for (std::size_t j = 0; j < cols; ++j)
            if (col_mask[j]) mx = std::max(mx, m.at(i, j));
        S denom = 0;
        for (std::size_t j = 0; j < cols; ++j) {
            if (!col_mask[j]) continue;
            out_v[i * cols + j] = std::exp(m.at(i, j) - mx);
            denom += out_v[i * cols + j];
        }
        for (std::size_t j = 0; j < cols; ++j)
            if (col_mask[j]) out_v[i * cols + j] /= denom;
    }
    auto out = Tensor<S>::from_values(m.shape(), std::move(out_v));
    if (detail::wants_grad(g, {&m})) {
        out.set_requires_grad(true);
        g.record([m, out, col_mask, rows, cols]() mutable {
            if (!out.has_grad()) return;
            auto og = out.grad();
            m.ensure_grad();
            auto mg = m.grad_mut();
            for (std::size_t i = 0; i < rows; ++i) {
                S inner = 0;
                for (std::size_t j = 0; j < cols; ++j)
                    if (col_mask[j]) inner += og[i * cols + j] * out.at(i, j);
                for (std::size_t j = 0; j < cols; ++j)
                    if (col_mask[j])
                        mg[i * cols + j] += out.at(i, j) * (og[i * cols + j] - inner);
            }
        });
    }
    return out;
}

// Column-wise max over the unmasked rows of a matrix. The gradient routes to
// the argmax row per column; ties break toward the lowest row index.
template <typename S>
Tensor<S> masked_maxpool(Graph<S>& g, Tensor<S> m, const Mask& row_mask) {
    detail::require(m.rank() == 2, "masked_maxpool: need a matrix");
    detail::require(row_mask.size() == m.dim(0), "masked_maxpool: mask length mismatch");
    std::size_t valid = 0;
    for (auto b : row_mask) valid += (b != 0);
    if (valid == 0) throw DegenerateInputError("masked_maxpool: all rows masked");

    const std::size_t rows = m.dim(0), cols = m.dim(1);
    std::vector<S> out_v(cols);
    std::vector<std::size_t> argmax(cols);
    for (std::size_t j = 0; j < cols; ++j) {
        bool first = true;
        for (std::size_t i = 0; i < rows; ++i) {
            if (!row_mask[i]) continue;
            if (first || m.at(i, j) > out_v[j]) {
                out_v[j] = m.at(i, j);
                argmax[j] = i;
                first = false;
            }
        }
    }
    auto out = Tensor<S>::from_values({cols}, std::move(out_v));
    if (detail::wants_grad(g, {&m})) {
        out.set_requires_grad(true);
        g.record([m, out, argmax, cols]() mutable {
            if (!out.has_grad()) return;
            auto og = out.grad();
            m.ensure_grad();
            auto mg = m.grad_mut();
            for (std::size_t j = 0; j < cols; ++j) mg[argmax[j] * cols + j] += og[j];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// normalization and attention
// ---------------------------------------------------------------------------

// Row-wise layer normalization (whole-vector for rank 1) with learned gain
// and bias. Population variance; epsilon inside the square root.
template <typename S>
Tensor<S> layer_norm(Graph<S>& g, Tensor<S> x, Tensor<S> gain, Tensor<S> bias,
                     S eps = S(1e-5)) {
    detail::require(x.rank() == 1 || x.rank() == 2, "layer_norm: need vector or matrix");
    const std::size_t cols = x.rank() == 2 ? x.dim(1) : x.dim(0);
    const std::size_t rows = x.rank() == 2 ? x.dim(0) : 1;
    detail::require(gain.rank() == 1 && gain.dim(0) == cols && bias.rank() == 1 &&
                        bias.dim(0) == cols,
                    "layer_norm: gain/bias must match the normalized width");

    std::vector<S> out_v(x.numel());
    std::vector<S> xhat(x.numel());
    std::vector<S> inv_std(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        S mean = 0;
        for (std::size_t j = 0; j < cols; ++j) mean += x.at(i * cols + j);
        mean /= S(cols);
        S var = 0;
        for (std::size_t j = 0; j < cols; ++j) {
            const S d = x.at(i * cols + j) - mean;
            var += d * d;
        }
        var /= S(cols);
        inv_std[i] = S(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < cols; ++j) {
            xhat[i * cols + j] = (x.at(i * cols + j) - mean) * inv_std[i];
            out_v[i * cols + j] = xhat[i * cols + j] * gain.at(j) + bias.at(j);
        }
    }
    auto out = Tensor<S>::from_values(x.shape(), std::move(out_v));
    if (detail::wants_grad(g, {&x, &gain, &bias})) {
        out.set_requires_grad(true);
        g.record([x, gain, bias, out, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
                  cols]() mutable {
            if (!out.has_grad()) return;
            auto og = out.grad();
            for (std::size_t i = 0; i < rows; ++i) {
                if (x.requires_grad()) {
                    x.ensure_grad();
                    auto xg = x.grad_mut();
                    S mean_u = 0, mean_ux = 0;
                    for (std::size_t j = 0; j < cols; ++j) {
                        const S u = og[i * cols + j] * gain.at(j);
                        mean_u += u;
                        mean_ux += u * xhat[i * cols + j];
                    }
                    mean_u /= S(cols);
                    mean_ux /= S(cols);
                    for (std::size_t j = 0; j < cols; ++j) {
                        const S u = og[i * cols + j] * gain.at(j);
                        xg[i * cols + j] +=
                            (u - mean_u - xhat[i * cols + j] * mean_ux) * inv_std[i];
                    }
                }
                if (gain.requires_grad()) {
                    gain.ensure_grad();
                    auto gg = gain.grad_mut();
                    for (std::size_t j = 0; j < cols; ++j)
                        gg[j] += og[i * cols + j] * xhat[i * cols + j];
                }
                if (bias.requires_grad()) {
                    bias.ensure_grad();
                    auto bg = bias.grad_mut();
                    for (std::size_t j = 0; j < cols; ++j) bg[j] += og[i * cols + j];
                }
            }
        });
    }
    return out;
}

// softmax(Q K^T / sqrt(d_k)) V with masked key positions. Composed from the
// primitives above, so gradients come for free.
template <typename S>
Tensor<S> scaled_dot_attention(Graph<S>& g, Tensor<S> q, Tensor<S> k, Tensor<S> v,
                               const Mask& key_mask) {
    detail::require(q.rank() == 2 && k.rank() == 2 && v.rank() == 2,
                    "scaled_dot_attention: Q, K, V must be matrices");
    detail::require(q.dim(1) == k.dim(1), "scaled_dot_attention: Q/K width mismatch");
    detail::require(k.dim(0) == v.dim(0), "scaled_dot_attention: K/V length mismatch");
    auto scores = scale(g, matmul(g, q, transpose(g, k)),
                        S(1) / std::sqrt(static_cast<S>(q.dim(1))));
    auto weights = masked_softmax_rows(g, scores, key_mask);
    return matmul(g, weights, v);
}

// x @ W + b with W laid out (in x out); rank-1 or rank-2 x.
template <typename S>
Tensor<S> affine(Graph<S>& g, Tensor<S> x, Tensor<S> w, Tensor<S> b) {
    auto y = matmul(g, x, w);
    if (y.rank() == 2) return add_rowvec(g, y, b);
    return add(g, y, b);
}

}  // namespace treematch::ad
