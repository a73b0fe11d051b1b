#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "fedci/kernels.hpp"
#include "fedci/rng.hpp"
#include "fedci/tensor.hpp"

// Reverse-mode differentiation over a tape of backward closures. Ops compute
// the forward value eagerly and, when a tape is supplied, record a closure
// that scatters the output gradient back to the inputs. Passing tape=nullptr
// runs the op in inference mode.

namespace fedci {

template <class R>
struct VarNode {
    Tensor<R> value;
    Tensor<R> grad;
};

template <class R>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<R> v) : node_(std::make_shared<VarNode<R>>()) {
        node_->grad = Tensor<R>::zeros(v.dims);
        node_->value = std::move(v);
    }

    Tensor<R>& value() { return node_->value; }
    const Tensor<R>& value() const { return node_->value; }
    Tensor<R>& grad() { return node_->grad; }
    const Tensor<R>& grad() const { return node_->grad; }
    Shape dims() const { return node_->value.dims; }

    void zero_grad() { std::fill(node_->grad.data.begin(), node_->grad.data.end(), R(0)); }

    bool valid() const { return node_ != nullptr; }
    std::shared_ptr<VarNode<R>> node() const { return node_; }

private:
    std::shared_ptr<VarNode<R>> node_;
};

template <class R>
class Tape {
public:
    void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

    // Seeds d(root)/d(root) = 1 and replays the tape in reverse.
    void backward(Var<R>& root) {
        if (root.value().numel() != 1)
            throw ShapeError("backward root must be scalar, got " + root.dims().str());
        root.grad().data[0] = R(1);
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

    void clear() { steps_.clear(); }
    size_t size() const { return steps_.size(); }

private:
    std::vector<std::function<void()>> steps_;
};

namespace ops {

// y[..., j] = sum_i x[..., i] * W[i, j] + b[j]
template <class R>
Var<R> linear(Tape<R>* tape, const Var<R>& x, const Var<R>& w, const Var<R>& b) {
    const auto& bk = kernels::backend<R>();
    const Shape xs = x.dims();
    const Shape ws = w.dims();
    if (ws.ndim != 2)
        throw ShapeError("linear: weight must be 2-D, got " + ws.str());
    const int64_t din = ws[0], dout = ws[1];
    if (xs.last() != din)
        throw ShapeError("linear: input " + xs.str() + " does not match weight " + ws.str());
    if (b.dims().numel() != dout)
        throw ShapeError("linear: bias " + b.dims().str() + " does not match weight " + ws.str());

    Shape os = xs;
    os.ext[static_cast<size_t>(os.ndim - 1)] = dout;
    const int64_t rows = xs.numel() / din;

    Tensor<R> out(os);
    for (int64_t r = 0; r < rows; ++r)
        std::memcpy(out.ptr() + r * dout, b.value().ptr(), static_cast<size_t>(dout) * sizeof(R));
    bk.gemm_nn(rows, din, dout, x.value().ptr(), w.value().ptr(), out.ptr());

    Var<R> y(std::move(out));
    if (tape) {
        auto xn = x.node(), wn = w.node(), bn = b.node(), yn = y.node();
        tape->record([xn, wn, bn, yn, rows, din, dout] {
            const auto& k = kernels::backend<R>();
            const R* dy = yn->grad.ptr();
            k.gemm_nt(rows, dout, din, dy, wn->value.ptr(), xn->grad.ptr());
            k.gemm_tn(din, rows, dout, xn->value.ptr(), dy, wn->grad.ptr());
            k.col_sum_acc(dy, bn->grad.ptr(), rows, dout);
        });
    }
    return y;
}

// Normalizes over the last extent with population variance.
template <class R>
Var<R> layer_norm(Tape<R>* tape, const Var<R>& x, const Var<R>& gamma, const Var<R>& beta, R eps) {
    const auto& bk = kernels::backend<R>();
    const Shape xs = x.dims();
    const int64_t h = xs.last();
    if (gamma.dims().numel() != h || beta.dims().numel() != h)
        throw ShapeError("layer_norm: affine params " + gamma.dims().str() + "/" +
                         beta.dims().str() + " do not match last extent of " + xs.str());
    if (eps <= R(0)) throw ShapeError("layer_norm: eps must be > 0");

    const int64_t rows = xs.numel() / h;
    Tensor<R> out(xs);
    std::vector<R> means(static_cast<size_t>(rows)), istds(static_cast<size_t>(rows));
    bk.layer_norm_fwd(x.value().ptr(), gamma.value().ptr(), beta.value().ptr(), out.ptr(),
                      means.data(), istds.data(), rows, h, eps);

    Var<R> y(std::move(out));
    if (tape) {
        auto xn = x.node(), gn = gamma.node(), bn = beta.node(), yn = y.node();
        tape->record([xn, gn, bn, yn, rows, h, means = std::move(means), istds = std::move(istds)] {
            kernels::backend<R>().layer_norm_bwd(xn->value.ptr(), gn->value.ptr(), yn->grad.ptr(),
                                                 means.data(), istds.data(), xn->grad.ptr(),
                                                 gn->grad.ptr(), bn->grad.ptr(), rows, h);
        });
    }
    return y;
}

template <class R>
Var<R> relu(Tape<R>* tape, const Var<R>& x) {
    const auto& bk = kernels::backend<R>();
    Tensor<R> out(x.dims());
    const int64_t n = out.numel();
    bk.relu_fwd(x.value().ptr(), out.ptr(), n);
    Var<R> y(std::move(out));
    if (tape) {
        auto xn = x.node(), yn = y.node();
        tape->record([xn, yn, n] {
            kernels::backend<R>().relu_bwd(xn->value.ptr(), yn->grad.ptr(), xn->grad.ptr(), n);
        });
    }
    return y;
}

// Inverted dropout: survivors scale by 1/(1-p) so eval mode is the identity.
template <class R>
Var<R> dropout(Tape<R>* tape, const Var<R>& x, double p, Rng& rng, bool training) {
    if (p < 0.0 || p >= 1.0)
        throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(p));
    if (!training || p == 0.0) return x;

    const int64_t n = x.value().numel();
    auto mask = std::make_shared<std::vector<R>>(static_cast<size_t>(n));
    const R scale = static_cast<R>(1.0 / (1.0 - p));
    Tensor<R> out(x.dims());
    for (int64_t i = 0; i < n; ++i) {
        R m = rng.uniform() < p ? R(0) : scale;
        (*mask)[static_cast<size_t>(i)] = m;
        out.data[static_cast<size_t>(i)] = x.value().data[static_cast<size_t>(i)] * m;
    }
    Var<R> y(std::move(out));
    if (tape) {
        auto xn = x.node(), yn = y.node();
        tape->record([xn, yn, mask, n] {
            kernels::backend<R>().mul_acc(yn->grad.ptr(), mask->data(), xn->grad.ptr(), n);
        });
    }
    return y;
}

// out[..., :] = table[idx[...], :]; backward scatter-adds into the table.
template <class R>
Var<R> gather_rows(Tape<R>* tape, const Var<R>& table, const ITensor& idx) {
    const Shape ts = table.dims();
    if (ts.ndim != 2) throw ShapeError("gather_rows: table must be 2-D, got " + ts.str());
    if (idx.dims.ndim > 3) throw ShapeError("gather_rows: index rank too large for 4-D output");
    const int64_t nrows = ts[0], d = ts[1];
    for (int64_t v : idx.data)
        if (v < 0 || v >= nrows)
            throw IndexError("gather_rows: index " + std::to_string(v) + " out of range [0, " +
                             std::to_string(nrows) + ")");

    Shape os;
    os.ndim = idx.dims.ndim + 1;
    for (int i = 0; i < idx.dims.ndim; ++i) os.ext[static_cast<size_t>(i)] = idx.dims[i];
    os.ext[static_cast<size_t>(idx.dims.ndim)] = d;

    const int64_t m = idx.numel();
    Tensor<R> out(os);
    for (int64_t r = 0; r < m; ++r)
        std::memcpy(out.ptr() + r * d, table.value().ptr() + idx.data[static_cast<size_t>(r)] * d,
                    static_cast<size_t>(d) * sizeof(R));

    Var<R> y(std::move(out));
    if (tape) {
        auto tn = table.node(), yn = y.node();
        auto rows = std::make_shared<std::vector<int64_t>>(idx.data);
        tape->record([tn, yn, rows, m, d] {
            const auto& k = kernels::backend<R>();
            for (int64_t r = 0; r < m; ++r)
                k.add(yn->grad.ptr() + r * d, tn->grad.ptr() + (*rows)[static_cast<size_t>(r)] * d, d);
        });
    }
    return y;
}

// Concatenates along the last extent; leading extents must agree.
template <class R>
Var<R> concat_last(Tape<R>* tape, const std::vector<Var<R>>& xs) {
    if (xs.empty()) throw ShapeError("concat_last: no inputs");
    const Shape s0 = xs[0].dims();
    int64_t total_last = 0;
    for (const auto& x : xs) {
        const Shape s = x.dims();
        if (s.ndim != s0.ndim)
            throw ShapeError("concat_last: rank mismatch " + s.str() + " vs " + s0.str());
        for (int i = 0; i + 1 < s.ndim; ++i)
            if (s[i] != s0[i])
                throw ShapeError("concat_last: leading extents differ: " + s.str() + " vs " + s0.str());
        total_last += s.last();
    }

    Shape os = s0;
    os.ext[static_cast<size_t>(os.ndim - 1)] = total_last;
    const int64_t rows = os.numel() / total_last;

    Tensor<R> out(os);
    int64_t off = 0;
    for (const auto& x : xs) {
        const int64_t w = x.dims().last();
        for (int64_t r = 0; r < rows; ++r)
            std::memcpy(out.ptr() + r * total_last + off, x.value().ptr() + r * w,
                        static_cast<size_t>(w) * sizeof(R));
        off += w;
    }

    Var<R> y(std::move(out));
    if (tape) {
        std::vector<std::shared_ptr<VarNode<R>>> nodes;
        std::vector<int64_t> widths;
        for (const auto& x : xs) {
            nodes.push_back(x.node());
            widths.push_back(x.dims().last());
        }
        auto yn = y.node();
        tape->record([nodes = std::move(nodes), widths = std::move(widths), yn, rows, total_last] {
            const auto& k = kernels::backend<R>();
            int64_t off = 0;
            for (size_t i = 0; i < nodes.size(); ++i) {
                const int64_t w = widths[i];
                for (int64_t r = 0; r < rows; ++r)
                    k.add(yn->grad.ptr() + r * total_last + off, nodes[i]->grad.ptr() + r * w, w);
                off += w;
            }
        });
    }
    return y;
}

namespace detail {
template <class R>
inline void swap_bthn(const Tensor<R>& src, Tensor<R>& dst, bool accumulate) {
    // dst[b,h,n,t] (+)= src[b,t,n,h]
    const int64_t bb = src.dims[0], tt = src.dims[1], nn = src.dims[2], hh = src.dims[3];
    for (int64_t b = 0; b < bb; ++b)
        for (int64_t t = 0; t < tt; ++t)
            for (int64_t n = 0; n < nn; ++n) {
                const R* sp = src.ptr() + ((b * tt + t) * nn + n) * hh;
                for (int64_t h = 0; h < hh; ++h) {
                    R* dp = dst.ptr() + ((b * hh + h) * nn + n) * tt + t;
                    if (accumulate)
                        *dp += sp[h];
                    else
                        *dp = sp[h];
                }
            }
}
}  // namespace detail

// out[b,h,n,t] = x[b,t,n,h]; an involution, and its own backward.
template <class R>
Var<R> swap_time_hidden(Tape<R>* tape, const Var<R>& x) {
    const Shape xs = x.dims();
    if (xs.ndim != 4) throw ShapeError("swap_time_hidden: expected 4-D input, got " + xs.str());
    Tensor<R> out(Shape{xs[0], xs[3], xs[2], xs[1]});
    detail::swap_bthn(x.value(), out, false);
    Var<R> y(std::move(out));
    if (tape) {
        auto xn = x.node(), yn = y.node();
        tape->record([xn, yn] { detail::swap_bthn(yn->grad, xn->grad, true); });
    }
    return y;
}

// [B,T,D] -> [B,T,N,D], repeating along the new node axis.
template <class R>
Var<R> tile_nodes(Tape<R>* tape, const Var<R>& x, int64_t n_nodes) {
    const Shape xs = x.dims();
    if (xs.ndim != 3) throw ShapeError("tile_nodes: expected 3-D input, got " + xs.str());
    const int64_t d = xs[2], rows = xs[0] * xs[1];
    Tensor<R> out(Shape{xs[0], xs[1], n_nodes, d});
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t n = 0; n < n_nodes; ++n)
            std::memcpy(out.ptr() + (r * n_nodes + n) * d, x.value().ptr() + r * d,
                        static_cast<size_t>(d) * sizeof(R));
    Var<R> y(std::move(out));
    if (tape) {
        auto xn = x.node(), yn = y.node();
        tape->record([xn, yn, rows, n_nodes, d] {
            const auto& k = kernels::backend<R>();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t n = 0; n < n_nodes; ++n)
                    k.add(yn->grad.ptr() + (r * n_nodes + n) * d, xn->grad.ptr() + r * d, d);
        });
    }
    return y;
}

// [N,D] -> [B,T,N,D], repeating across batch and time.
template <class R>
Var<R> tile_batch_time(Tape<R>* tape, const Var<R>& x, int64_t b, int64_t t) {
    const Shape xs = x.dims();
    if (xs.ndim != 2) throw ShapeError("tile_batch_time: expected 2-D input, got " + xs.str());
    const int64_t nd = xs.numel();
    Tensor<R> out(Shape{b, t, xs[0], xs[1]});
    for (int64_t r = 0; r < b * t; ++r)
        std::memcpy(out.ptr() + r * nd, x.value().ptr(), static_cast<size_t>(nd) * sizeof(R));
    Var<R> y(std::move(out));
    if (tape) {
        auto xn = x.node(), yn = y.node();
        tape->record([xn, yn, reps = b * t, nd] {
            const auto& k = kernels::backend<R>();
            for (int64_t r = 0; r < reps; ++r) k.add(yn->grad.ptr() + r * nd, xn->grad.ptr(), nd);
        });
    }
    return y;
}

// x[..., j] + v[j]
template <class R>
Var<R> add_vec(Tape<R>* tape, const Var<R>& x, const Var<R>& v) {
    const int64_t h = x.dims().last();
    if (v.dims().numel() != h)
        throw ShapeError("add_vec: vector " + v.dims().str() + " does not match last extent of " +
                         x.dims().str());
    const int64_t rows = x.value().numel() / h;
    Tensor<R> out = x.value();
    const auto& bk = kernels::backend<R>();
    for (int64_t r = 0; r < rows; ++r) bk.add(v.value().ptr(), out.ptr() + r * h, h);
    Var<R> y(std::move(out));
    if (tape) {
        auto xn = x.node(), vn = v.node(), yn = y.node();
        tape->record([xn, vn, yn, rows, h] {
            const auto& k = kernels::backend<R>();
            k.add(yn->grad.ptr(), xn->grad.ptr(), rows * h);
            k.col_sum_acc(yn->grad.ptr(), vn->grad.ptr(), rows, h);
        });
    }
    return y;
}

template <class R>
Var<R> reshape(Tape<R>* tape, const Var<R>& x, Shape s) {
    if (s.numel() != x.value().numel())
        throw ShapeError("reshape: element count mismatch " + x.dims().str() + " -> " + s.str());
    Tensor<R> out(s, x.value().data);
    Var<R> y(std::move(out));
    if (tape) {
        auto xn = x.node(), yn = y.node();
        tape->record([xn, yn] {
            kernels::backend<R>().add(yn->grad.ptr(), xn->grad.ptr(), xn->grad.numel());
        });
    }
    return y;
}

// Mean absolute error with subgradient 0 at exact ties.
template <class R>
Var<R> mae_loss(Tape<R>* tape, const Var<R>& pred, const Tensor<R>& target) {
    if (pred.dims() != target.dims)
        throw ShapeError("mae_loss: shape mismatch " + pred.dims().str() + " vs " + target.dims.str());
    const int64_t n = target.numel();
    const auto& bk = kernels::backend<R>();
    Tensor<R> out(Shape{1});
    out.data[0] = bk.sum_abs_diff(pred.value().ptr(), target.ptr(), n) / static_cast<R>(n);
    Var<R> y(std::move(out));
    if (tape) {
        auto pn = pred.node(), yn = y.node();
        auto tgt = std::make_shared<Tensor<R>>(target);
        tape->record([pn, yn, tgt, n] {
            const R scale = yn->grad.data[0] / static_cast<R>(n);
            const R* p = pn->value.ptr();
            const R* t = tgt->ptr();
            R* dp = pn->grad.ptr();
            for (int64_t i = 0; i < n; ++i) {
                R d = p[i] - t[i];
                if (d > R(0))
                    dp[i] += scale;
                else if (d < R(0))
                    dp[i] -= scale;
            }
        });
    }
    return y;
}

}  // namespace ops
}  // namespace fedci
