#pragma once

// Differentiable tensor operations. Every primitive's backward is written in
// terms of other primitives, so the op set is closed under differentiation:
// running a backward pass under grad mode yields a graph that can itself be
// differentiated (required by the gradient penalty).

#include <cmath>
#include <utility>
#include <vector>

#include "uvcgan/core/autodiff.hpp"
#include "uvcgan/core/tensor.hpp"

namespace uvcgan {

namespace detail {

template <typename S>
void check_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
}

inline Index conv_out_dim(Index in, Index k, Index stride, Index pad) {
    return (in + 2 * pad - k) / stride + 1;
}

inline Shape lastdim_replaced(const Shape& s, Index n) {
    Shape r = s;
    r[r.rank() - 1] = n;
    return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
    detail::check_same_shape("add", a.value(), b.value());
    Tensor<S> out(a.shape());
    out.array() = a.value().array() + b.value().array();
    return Var<S>::op(std::move(out), {a, b},
                      [](const Var<S>& g) { return std::vector<Var<S>>{g, g}; });
}

template <typename S>
Var<S> mul_scalar(const Var<S>& a, S c) {
    Tensor<S> out(a.shape());
    out.array() = a.value().array() * c;
    return Var<S>::op(std::move(out), {a}, [c](const Var<S>& g) {
        return std::vector<Var<S>>{mul_scalar(g, c)};
    });
}

template <typename S>
Var<S> neg(const Var<S>& a) {
    return mul_scalar(a, S(-1));
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
    detail::check_same_shape("sub", a.value(), b.value());
    Tensor<S> out(a.shape());
    out.array() = a.value().array() - b.value().array();
    return Var<S>::op(std::move(out), {a, b},
                      [](const Var<S>& g) { return std::vector<Var<S>>{g, neg(g)}; });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
    detail::check_same_shape("mul", a.value(), b.value());
    Tensor<S> out(a.shape());
    out.array() = a.value().array() * b.value().array();
    return Var<S>::op(std::move(out), {a, b}, [a, b](const Var<S>& g) {
        return std::vector<Var<S>>{mul(g, b), mul(g, a)};
    });
}

template <typename S>
Var<S> div(const Var<S>& a, const Var<S>& b) {
    detail::check_same_shape("div", a.value(), b.value());
    Tensor<S> out(a.shape());
    out.array() = a.value().array() / b.value().array();
    return Var<S>::op(std::move(out), {a, b}, [a, b](const Var<S>& g) {
        return std::vector<Var<S>>{div(g, b), neg(div(mul(g, a), mul(b, b)))};
    });
}

template <typename S>
Var<S> add_scalar(const Var<S>& a, S c) {
    Tensor<S> out(a.shape());
    out.array() = a.value().array() + c;
    return Var<S>::op(std::move(out), {a},
                      [](const Var<S>& g) { return std::vector<Var<S>>{g}; });
}

template <typename S>
Var<S> square(const Var<S>& a) {
    return mul(a, a);
}

// ---------------------------------------------------------------------------
// Elementwise transcendental
// ---------------------------------------------------------------------------

template <typename S>
Var<S> exp(const Var<S>& a) {
    Tensor<S> out(a.shape());
    out.array() = a.value().array().exp();
    return Var<S>::op(std::move(out), {a}, [a](const Var<S>& g) {
        return std::vector<Var<S>>{mul(g, exp(a))};
    });
}

template <typename S>
Var<S> log(const Var<S>& a) {
    Tensor<S> out(a.shape());
    out.array() = a.value().array().log();
    return Var<S>::op(std::move(out), {a}, [a](const Var<S>& g) {
        return std::vector<Var<S>>{div(g, a)};
    });
}

template <typename S>
Var<S> sqrt(const Var<S>& a) {
    Tensor<S> out(a.shape());
    out.array() = a.value().array().sqrt();
    return Var<S>::op(std::move(out), {a}, [a](const Var<S>& g) {
        return std::vector<Var<S>>{div(g, mul_scalar(sqrt(a), S(2)))};
    });
}

template <typename S>
Var<S> sin(const Var<S>& a) {
    Tensor<S> out(a.shape());
    out.array() = a.value().array().sin();
    return Var<S>::op(std::move(out), {a}, [a](const Var<S>& g) {
        return std::vector<Var<S>>{mul(g, cos(a))};
    });
}

template <typename S>
Var<S> cos(const Var<S>& a) {
    Tensor<S> out(a.shape());
    out.array() = a.value().array().cos();
    return Var<S>::op(std::move(out), {a}, [a](const Var<S>& g) {
        return std::vector<Var<S>>{neg(mul(g, sin(a)))};
    });
}

template <typename S>
Var<S> erf(const Var<S>& a) {
    Tensor<S> out(a.shape());
    for (Index i = 0; i < out.numel(); ++i) out[i] = std::erf(a.value()[i]);
    return Var<S>::op(std::move(out), {a}, [a](const Var<S>& g) {
        const S c = S(2) / std::sqrt(S(M_PI));
        return std::vector<Var<S>>{mul(g, mul_scalar(exp(neg(mul(a, a))), c))};
    });
}

// |x|; the subgradient at 0 is taken as 0.
template <typename S>
Var<S> abs(const Var<S>& a) {
    Tensor<S> out(a.shape());
    out.array() = a.value().array().abs();
    return Var<S>::op(std::move(out), {a}, [a](const Var<S>& g) {
        Tensor<S> sign(a.shape());
        for (Index i = 0; i < sign.numel(); ++i) {
            const S v = a.value()[i];
            sign[i] = v > S(0) ? S(1) : (v < S(0) ? S(-1) : S(0));
        }
        return std::vector<Var<S>>{mul(g, Var<S>::constant(std::move(sign)))};
    });
}

template <typename S>
Var<S> leaky_relu(const Var<S>& a, S slope) {
    Tensor<S> out(a.shape());
    for (Index i = 0; i < out.numel(); ++i) {
        const S v = a.value()[i];
        out[i] = v >= S(0) ? v : slope * v;
    }
    return Var<S>::op(std::move(out), {a}, [a, slope](const Var<S>& g) {
        Tensor<S> mask(a.shape());
        for (Index i = 0; i < mask.numel(); ++i)
            mask[i] = a.value()[i] >= S(0) ? S(1) : slope;
        return std::vector<Var<S>>{mul(g, Var<S>::constant(std::move(mask)))};
    });
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
    Tensor<S> out(a.shape());
    for (Index i = 0; i < out.numel(); ++i) {
        const S v = a.value()[i];
        out[i] = v >= S(0) ? S(1) / (S(1) + std::exp(-v))
                           : std::exp(v) / (S(1) + std::exp(v));
    }
    return Var<S>::op(std::move(out), {a}, [a](const Var<S>& g) {
        Var<S> s = sigmoid(a);
        return std::vector<Var<S>>{mul(g, mul(s, add_scalar(neg(s), S(1))))};
    });
}

template <typename S>
Var<S> gelu(const Var<S>& a) {
    const S inv_sqrt2 = S(1) / std::sqrt(S(2));
    return mul_scalar(mul(a, add_scalar(erf(mul_scalar(a, inv_sqrt2)), S(1))), S(0.5));
}

// ---------------------------------------------------------------------------
// Reductions and broadcasts (closed pairs)
// ---------------------------------------------------------------------------

template <typename S>
Var<S> broadcast_all(const Var<S>& a, Shape target);

template <typename S>
Var<S> sum_all(const Var<S>& a) {
    Tensor<S> out = Tensor<S>::scalar(a.value().array().sum());
    Shape src = a.shape();
    return Var<S>::op(std::move(out), {a}, [src](const Var<S>& g) {
        return std::vector<Var<S>>{broadcast_all(g, src)};
    });
}

template <typename S>
Var<S> broadcast_all(const Var<S>& a, Shape target) {
    if (a.numel() != 1) throw ShapeError("broadcast_all: source must be a scalar");
    Tensor<S> out = Tensor<S>::full(target, a.value()[0]);
    return Var<S>::op(std::move(out), {a}, [](const Var<S>& g) {
        return std::vector<Var<S>>{sum_all(g)};
    });
}

template <typename S>
Var<S> mean_all(const Var<S>& a) {
    return mul_scalar(sum_all(a), S(1) / S(a.numel()));
}

template <typename S>
Var<S> broadcast_per_sample(const Var<S>& a, Shape target);

// (B, ...) -> (B): sum over everything but the leading dimension.
template <typename S>
Var<S> sum_per_sample(const Var<S>& a) {
    const Index b = a.shape()[0];
    const Index rest = a.numel() / b;
    Tensor<S> out(Shape{b});
    out.matrix(b, 1) = a.value().matrix(b, rest).rowwise().sum();
    Shape src = a.shape();
    return Var<S>::op(std::move(out), {a}, [src](const Var<S>& g) {
        return std::vector<Var<S>>{broadcast_per_sample(g, src)};
    });
}

template <typename S>
Var<S> broadcast_per_sample(const Var<S>& a, Shape target) {
    const Index b = target[0];
    if (a.rank() != 1 || a.numel() != b)
        throw ShapeError("broadcast_per_sample: source must be (batch)");
    const Index rest = target.numel() / b;
    Tensor<S> out(target);
    out.matrix(b, rest).colwise() = a.value().matrix(b, 1).col(0);
    return Var<S>::op(std::move(out), {a}, [](const Var<S>& g) {
        return std::vector<Var<S>>{sum_per_sample(g)};
    });
}

template <typename S>
Var<S> broadcast_spatial(const Var<S>& a, Index h, Index w);

// (B,C,H,W) -> (B,C,1,1)
template <typename S>
Var<S> spatial_sum(const Var<S>& a) {
    if (a.shape().rank() != 4) throw ShapeError("spatial_sum: rank-4 input required");
    const Index bc = a.shape()[0] * a.shape()[1];
    const Index hw = a.shape()[2] * a.shape()[3];
    Tensor<S> out(Shape{a.shape()[0], a.shape()[1], 1, 1});
    out.matrix(bc, 1) = a.value().matrix(bc, hw).rowwise().sum();
    const Index h = a.shape()[2], w = a.shape()[3];
    return Var<S>::op(std::move(out), {a}, [h, w](const Var<S>& g) {
        return std::vector<Var<S>>{broadcast_spatial(g, h, w)};
    });
}

template <typename S>
Var<S> broadcast_spatial(const Var<S>& a, Index h, Index w) {
    if (a.shape().rank() != 4 || a.shape()[2] != 1 || a.shape()[3] != 1)
        throw ShapeError("broadcast_spatial: source must be (B,C,1,1)");
    const Index bc = a.shape()[0] * a.shape()[1];
    Tensor<S> out(Shape{a.shape()[0], a.shape()[1], h, w});
    out.matrix(bc, h * w).colwise() = a.value().matrix(bc, 1).col(0);
    return Var<S>::op(std::move(out), {a}, [](const Var<S>& g) {
        return std::vector<Var<S>>{spatial_sum(g)};
    });
}

template <typename S>
Var<S> broadcast_channel(const Var<S>& a, Shape target);

// (B,C,H,W) -> (C)
template <typename S>
Var<S> channel_sum(const Var<S>& a) {
    if (a.shape().rank() != 4) throw ShapeError("channel_sum: rank-4 input required");
    const Index b = a.shape()[0], c = a.shape()[1], hw = a.shape()[2] * a.shape()[3];
    Tensor<S> out = Tensor<S>::zeros(Shape{c});
    for (Index bi = 0; bi < b; ++bi)
        for (Index ci = 0; ci < c; ++ci)
            out[ci] += a.value()
                           .matrix(b * c, hw)
                           .row(bi * c + ci)
                           .sum();
    Shape src = a.shape();
    return Var<S>::op(std::move(out), {a}, [src](const Var<S>& g) {
        return std::vector<Var<S>>{broadcast_channel(g, src)};
    });
}

template <typename S>
Var<S> broadcast_channel(const Var<S>& a, Shape target) {
    if (target.rank() != 4 || a.numel() != target[1])
        throw ShapeError("broadcast_channel: source must be (C) matching target channels");
    const Index b = target[0], c = target[1], hw = target[2] * target[3];
    Tensor<S> out(target);
    for (Index bi = 0; bi < b; ++bi)
        for (Index ci = 0; ci < c; ++ci)
            out.matrix(b * c, hw).row(bi * c + ci).setConstant(a.value()[ci]);
    return Var<S>::op(std::move(out), {a}, [](const Var<S>& g) {
        return std::vector<Var<S>>{channel_sum(g)};
    });
}

template <typename S>
Var<S> broadcast_lastdim(const Var<S>& a, Index n);

// (..., F) -> (..., 1)
template <typename S>
Var<S> lastdim_sum(const Var<S>& a) {
    const Index f = a.shape()[a.rank() - 1];
    const Index rows = a.numel() / f;
    Tensor<S> out(detail::lastdim_replaced(a.shape(), 1));
    out.matrix(rows, 1) = a.value().matrix(rows, f).rowwise().sum();
    return Var<S>::op(std::move(out), {a}, [f](const Var<S>& g) {
        return std::vector<Var<S>>{broadcast_lastdim(g, f)};
    });
}

template <typename S>
Var<S> broadcast_lastdim(const Var<S>& a, Index n) {
    if (a.shape()[a.rank() - 1] != 1)
        throw ShapeError("broadcast_lastdim: source last dimension must be 1");
    const Index rows = a.numel();
    Tensor<S> out(detail::lastdim_replaced(a.shape(), n));
    out.matrix(rows, n).colwise() = a.value().matrix(rows, 1).col(0);
    return Var<S>::op(std::move(out), {a}, [](const Var<S>& g) {
        return std::vector<Var<S>>{lastdim_sum(g)};
    });
}

template <typename S>
Var<S> broadcast_feature(const Var<S>& a, Shape target);

// (..., F) -> (F): sum over all but the last dimension.
template <typename S>
Var<S> feature_sum(const Var<S>& a) {
    const Index f = a.shape()[a.rank() - 1];
    const Index rows = a.numel() / f;
    Tensor<S> out(Shape{f});
    out.matrix(1, f) = a.value().matrix(rows, f).colwise().sum();
    Shape src = a.shape();
    return Var<S>::op(std::move(out), {a}, [src](const Var<S>& g) {
        return std::vector<Var<S>>{broadcast_feature(g, src)};
    });
}

template <typename S>
Var<S> broadcast_feature(const Var<S>& a, Shape target) {
    const Index f = target[target.rank() - 1];
    if (a.rank() != 1 || a.numel() != f)
        throw ShapeError("broadcast_feature: source must be (F) matching target last dim");
    const Index rows = target.numel() / f;
    Tensor<S> out(target);
    out.matrix(rows, f).rowwise() = a.value().matrix(1, f).row(0);
    return Var<S>::op(std::move(out), {a}, [](const Var<S>& g) {
        return std::vector<Var<S>>{feature_sum(g)};
    });
}

template <typename S>
Var<S> batch_sum(const Var<S>& a);

// (d...) -> (B, d...): tile along a new leading batch dimension.
template <typename S>
Var<S> repeat_batch(const Var<S>& a, Index b) {
    if (a.rank() >= 4) throw ShapeError("repeat_batch: input rank must be <= 3");
    std::array<Index, 4> dims{b, 1, 1, 1};
    for (int i = 0; i < a.rank(); ++i) dims[i + 1] = a.shape()[i];
    Shape target = Shape::of_rank(a.rank() + 1, dims);
    const Index n = a.numel();
    Tensor<S> out(target);
    out.matrix(b, n).rowwise() = a.value().matrix(1, n).row(0);
    return Var<S>::op(std::move(out), {a}, [](const Var<S>& g) {
        return std::vector<Var<S>>{batch_sum(g)};
    });
}

// (B, d...) -> (d...): sum over the leading batch dimension.
template <typename S>
Var<S> batch_sum(const Var<S>& a) {
    if (a.rank() < 2) throw ShapeError("batch_sum: input rank must be >= 2");
    const Index b = a.shape()[0];
    const Index n = a.numel() / b;
    std::array<Index, 4> dims{1, 1, 1, 1};
    for (int i = 1; i < a.rank(); ++i) dims[i - 1] = a.shape()[i];
    Shape target = Shape::of_rank(a.rank() - 1, dims);
    Tensor<S> out(target);
    out.matrix(1, n) = a.value().matrix(b, n).colwise().sum();
    return Var<S>::op(std::move(out), {a}, [b](const Var<S>& g) {
        return std::vector<Var<S>>{repeat_batch(g, b)};
    });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <typename S>
Var<S> reshape(const Var<S>& a, Shape target) {
    Tensor<S> out = a.value().reshaped(target);
    Shape src = a.shape();
    return Var<S>::op(std::move(out), {a}, [src](const Var<S>& g) {
        return std::vector<Var<S>>{reshape(g, src)};
    });
}

template <typename S>
Var<S> transpose(const Var<S>& a) {
    if (a.rank() != 2) throw ShapeError("transpose: rank-2 input required");
    const Index m = a.shape()[0], n = a.shape()[1];
    Tensor<S> out(Shape{n, m});
    out.matrix(n, m) = a.value().matrix(m, n).transpose();
    return Var<S>::op(std::move(out), {a}, [](const Var<S>& g) {
        return std::vector<Var<S>>{transpose(g)};
    });
}

// Batched transpose: (N, r, c) -> (N, c, r).
template <typename S>
Var<S> bt(const Var<S>& a) {
    if (a.rank() != 3) throw ShapeError("bt: rank-3 input required");
    const Index n = a.shape()[0], r = a.shape()[1], c = a.shape()[2];
    Tensor<S> out(Shape{n, c, r});
    for (Index i = 0; i < n; ++i) {
        typename Tensor<S>::ConstMatrixMap src(a.value().data() + i * r * c, r, c);
        typename Tensor<S>::MatrixMap dst(out.data() + i * r * c, c, r);
        dst = src.transpose();
    }
    return Var<S>::op(std::move(out), {a},
                      [](const Var<S>& g) { return std::vector<Var<S>>{bt(g)}; });
}

template <typename S>
Var<S> permute4(const Var<S>& a, std::array<int, 4> perm) {
    if (a.rank() != 4) throw ShapeError("permute4: rank-4 input required");
    const Shape& s = a.shape();
    Shape target = Shape::of_rank(4, {s[perm[0]], s[perm[1]], s[perm[2]], s[perm[3]]});
    Tensor<S> out(target);
    std::array<Index, 4> stride{s[1] * s[2] * s[3], s[2] * s[3], s[3], 1};
    Index idx = 0;
    std::array<Index, 4> c{};
    for (c[0] = 0; c[0] < target[0]; ++c[0])
        for (c[1] = 0; c[1] < target[1]; ++c[1])
            for (c[2] = 0; c[2] < target[2]; ++c[2])
                for (c[3] = 0; c[3] < target[3]; ++c[3])
                    out[idx++] = a.value()[c[0] * stride[perm[0]] + c[1] * stride[perm[1]] +
                                           c[2] * stride[perm[2]] + c[3] * stride[perm[3]]];
    std::array<int, 4> inv{};
    for (int i = 0; i < 4; ++i) inv[perm[i]] = i;
    return Var<S>::op(std::move(out), {a}, [inv](const Var<S>& g) {
        return std::vector<Var<S>>{permute4(g, inv)};
    });
}

// ---------------------------------------------------------------------------
// Concat / slice / pad along channels (dim 1 of NCHW) and the last dimension
// ---------------------------------------------------------------------------

template <typename S>
Var<S> slice_channels(const Var<S>& a, Index from, Index count);

template <typename S>
Var<S> pad_channels(const Var<S>& a, Index before, Index after);

template <typename S>
Var<S> concat_channels(const Var<S>& a, const Var<S>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.rank() != 4 || sb.rank() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
        throw ShapeError("concat_channels: incompatible shapes " + sa.str() + " vs " + sb.str());
    const Index ca = sa[1], cb = sb[1], hw = sa[2] * sa[3];
    Tensor<S> out(Shape{sa[0], ca + cb, sa[2], sa[3]});
    for (Index bi = 0; bi < sa[0]; ++bi) {
        out.matrix(sa[0] * (ca + cb), hw).middleRows(bi * (ca + cb), ca) =
            a.value().matrix(sa[0] * ca, hw).middleRows(bi * ca, ca);
        out.matrix(sa[0] * (ca + cb), hw).middleRows(bi * (ca + cb) + ca, cb) =
            b.value().matrix(sa[0] * cb, hw).middleRows(bi * cb, cb);
    }
    return Var<S>::op(std::move(out), {a, b}, [ca, cb](const Var<S>& g) {
        return std::vector<Var<S>>{slice_channels(g, 0, ca), slice_channels(g, ca, cb)};
    });
}

template <typename S>
Var<S> slice_channels(const Var<S>& a, Index from, Index count) {
    const Shape& s = a.shape();
    if (s.rank() != 4 || from < 0 || count <= 0 || from + count > s[1])
        throw ShapeError("slice_channels: invalid range for shape " + s.str());
    const Index hw = s[2] * s[3];
    Tensor<S> out(Shape{s[0], count, s[2], s[3]});
    for (Index bi = 0; bi < s[0]; ++bi)
        out.matrix(s[0] * count, hw).middleRows(bi * count, count) =
            a.value().matrix(s[0] * s[1], hw).middleRows(bi * s[1] + from, count);
    const Index after = s[1] - from - count;
    return Var<S>::op(std::move(out), {a}, [from, after](const Var<S>& g) {
        return std::vector<Var<S>>{pad_channels(g, from, after)};
    });
}

template <typename S>
Var<S> pad_channels(const Var<S>& a, Index before, Index after) {
    const Shape& s = a.shape();
    if (s.rank() != 4) throw ShapeError("pad_channels: rank-4 input required");
    const Index c = s[1], co = before + c + after, hw = s[2] * s[3];
    Tensor<S> out = Tensor<S>::zeros(Shape{s[0], co, s[2], s[3]});
    for (Index bi = 0; bi < s[0]; ++bi)
        out.matrix(s[0] * co, hw).middleRows(bi * co + before, c) =
            a.value().matrix(s[0] * c, hw).middleRows(bi * c, c);
    return Var<S>::op(std::move(out), {a}, [before, c](const Var<S>& g) {
        return std::vector<Var<S>>{slice_channels(g, before, c)};
    });
}

template <typename S>
Var<S> slice_lastdim(const Var<S>& a, Index from, Index count);

template <typename S>
Var<S> pad_lastdim(const Var<S>& a, Index before, Index after);

template <typename S>
Var<S> concat_lastdim(const Var<S>& a, const Var<S>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.rank() != sb.rank()) throw ShapeError("concat_lastdim: rank mismatch");
    for (int i = 0; i + 1 < sa.rank(); ++i)
        if (sa[i] != sb[i])
            throw ShapeError("concat_lastdim: incompatible shapes " + sa.str() + " vs " + sb.str());
    const Index fa = sa[sa.rank() - 1], fb = sb[sb.rank() - 1];
    const Index rows = a.numel() / fa;
    Tensor<S> out(detail::lastdim_replaced(sa, fa + fb));
    out.matrix(rows, fa + fb).leftCols(fa) = a.value().matrix(rows, fa);
    out.matrix(rows, fa + fb).rightCols(fb) = b.value().matrix(rows, fb);
    return Var<S>::op(std::move(out), {a, b}, [fa, fb](const Var<S>& g) {
        return std::vector<Var<S>>{slice_lastdim(g, 0, fa), slice_lastdim(g, fa, fb)};
    });
}

template <typename S>
Var<S> slice_lastdim(const Var<S>& a, Index from, Index count) {
    const Index f = a.shape()[a.rank() - 1];
    if (from < 0 || count <= 0 || from + count > f)
        throw ShapeError("slice_lastdim: invalid range for shape " + a.shape().str());
    const Index rows = a.numel() / f;
    Tensor<S> out(detail::lastdim_replaced(a.shape(), count));
    out.matrix(rows, count) = a.value().matrix(rows, f).middleCols(from, count);
    const Index after = f - from - count;
    return Var<S>::op(std::move(out), {a}, [from, after](const Var<S>& g) {
        return std::vector<Var<S>>{pad_lastdim(g, from, after)};
    });
}

template <typename S>
Var<S> pad_lastdim(const Var<S>& a, Index before, Index after) {
    const Index f = a.shape()[a.rank() - 1];
    const Index rows = a.numel() / f;
    Tensor<S> out = Tensor<S>::zeros(detail::lastdim_replaced(a.shape(), before + f + after));
    out.matrix(rows, before + f + after).middleCols(before, f) = a.value().matrix(rows, f);
    return Var<S>::op(std::move(out), {a}, [before, f](const Var<S>& g) {
        return std::vector<Var<S>>{slice_lastdim(g, before, f)};
    });
}

// ---------------------------------------------------------------------------
// Nearest-neighbor x2 resampling
// ---------------------------------------------------------------------------

template <typename S>
Var<S> downsample_sum2(const Var<S>& a);

template <typename S>
Var<S> upsample_nearest2(const Var<S>& a) {
    const Shape& s = a.shape();
    if (s.rank() != 4) throw ShapeError("upsample_nearest2: rank-4 input required");
    Tensor<S> out(Shape{s[0], s[1], 2 * s[2], 2 * s[3]});
    const Index planes = s[0] * s[1];
    for (Index p = 0; p < planes; ++p) {
        const S* src = a.value().data() + p * s[2] * s[3];
        S* dst = out.data() + p * 4 * s[2] * s[3];
        for (Index y = 0; y < s[2]; ++y)
            for (Index x = 0; x < s[3]; ++x) {
                const S v = src[y * s[3] + x];
                S* row0 = dst + (2 * y) * 2 * s[3] + 2 * x;
                S* row1 = row0 + 2 * s[3];
                row0[0] = row0[1] = row1[0] = row1[1] = v;
            }
    }
    return Var<S>::op(std::move(out), {a}, [](const Var<S>& g) {
        return std::vector<Var<S>>{downsample_sum2(g)};
    });
}

template <typename S>
Var<S> downsample_sum2(const Var<S>& a) {
    const Shape& s = a.shape();
    if (s.rank() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0)
        throw ShapeError("downsample_sum2: spatial dims must be even");
    Tensor<S> out(Shape{s[0], s[1], s[2] / 2, s[3] / 2});
    const Index planes = s[0] * s[1];
    for (Index p = 0; p < planes; ++p) {
        const S* src = a.value().data() + p * s[2] * s[3];
        S* dst = out.data() + p * (s[2] / 2) * (s[3] / 2);
        for (Index y = 0; y < s[2] / 2; ++y)
            for (Index x = 0; x < s[3] / 2; ++x) {
                const S* row0 = src + (2 * y) * s[3] + 2 * x;
                const S* row1 = row0 + s[3];
                dst[y * (s[3] / 2) + x] = row0[0] + row0[1] + row1[0] + row1[1];
            }
    }
    return Var<S>::op(std::move(out), {a}, [](const Var<S>& g) {
        return std::vector<Var<S>>{upsample_nearest2(g)};
    });
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
        throw ShapeError("matmul: incompatible shapes " + a.shape().str() + " x " +
                         b.shape().str());
    const Index m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor<S> out(Shape{m, n});
    out.matrix(m, n).noalias() = a.value().matrix(m, k) * b.value().matrix(k, n);
    return Var<S>::op(std::move(out), {a, b}, [a, b](const Var<S>& g) {
        return std::vector<Var<S>>{matmul(g, transpose(b)), matmul(transpose(a), g)};
    });
}

template <typename S>
Var<S> bmm(const Var<S>& a, const Var<S>& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] ||
        a.shape()[2] != b.shape()[1])
        throw ShapeError("bmm: incompatible shapes " + a.shape().str() + " x " + b.shape().str());
    const Index nb = a.shape()[0], m = a.shape()[1], k = a.shape()[2], n = b.shape()[2];
    Tensor<S> out(Shape{nb, m, n});
    for (Index i = 0; i < nb; ++i) {
        typename Tensor<S>::ConstMatrixMap am(a.value().data() + i * m * k, m, k);
        typename Tensor<S>::ConstMatrixMap bm(b.value().data() + i * k * n, k, n);
        typename Tensor<S>::MatrixMap om(out.data() + i * m * n, m, n);
        om.noalias() = am * bm;
    }
    return Var<S>::op(std::move(out), {a, b}, [a, b](const Var<S>& g) {
        return std::vector<Var<S>>{bmm(g, bt(b)), bmm(bt(a), g)};
    });
}

// ---------------------------------------------------------------------------
// 2D convolution family (NCHW). conv2d, its input-gradient and its
// weight-gradient are mutually expressible, closing the set under
// differentiation of any order.
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
using ColMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

// One sample (C,H,W) -> patch matrix (C*kh*kw, Ho*Wo), zero padding.
template <typename S>
void im2col(const S* x, Index c, Index h, Index w, Index kh, Index kw, Index stride, Index pad,
            Index ho, Index wo, ColMatrix<S>& cols) {
    for (Index oy = 0; oy < ho; ++oy)
        for (Index ox = 0; ox < wo; ++ox) {
            const Index col = oy * wo + ox;
            S* dst = cols.data() + col * cols.rows();
            const Index iy0 = oy * stride - pad;
            const Index ix0 = ox * stride - pad;
            Index r = 0;
            for (Index ci = 0; ci < c; ++ci) {
                const S* plane = x + ci * h * w;
                for (Index u = 0; u < kh; ++u) {
                    const Index iy = iy0 + u;
                    for (Index v = 0; v < kw; ++v, ++r) {
                        const Index ix = ix0 + v;
                        dst[r] = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? plane[iy * w + ix]
                                                                          : S(0);
                    }
                }
            }
        }
}

// Scatter-add inverse of im2col.
template <typename S>
void col2im_add(const ColMatrix<S>& cols, Index c, Index h, Index w, Index kh, Index kw,
                Index stride, Index pad, Index ho, Index wo, S* x) {
    for (Index oy = 0; oy < ho; ++oy)
        for (Index ox = 0; ox < wo; ++ox) {
            const Index col = oy * wo + ox;
            const S* src = cols.data() + col * cols.rows();
            const Index iy0 = oy * stride - pad;
            const Index ix0 = ox * stride - pad;
            Index r = 0;
            for (Index ci = 0; ci < c; ++ci) {
                S* plane = x + ci * h * w;
                for (Index u = 0; u < kh; ++u) {
                    const Index iy = iy0 + u;
                    for (Index v = 0; v < kw; ++v, ++r) {
                        const Index ix = ix0 + v;
                        if (iy >= 0 && iy < h && ix >= 0 && ix < w) plane[iy * w + ix] += src[r];
                    }
                }
            }
        }
}

struct ConvGeom {
    Index b, cin, h, w, cout, kh, kw, ho, wo;
    Index stride, pad;
};

template <typename S>
ConvGeom conv_geometry(const char* op, const Shape& xs, const Shape& ws, Index stride, Index pad) {
    if (xs.rank() != 4 || ws.rank() != 4)
        throw ShapeError(std::string(op) + ": rank-4 input and weight required");
    if (xs[1] != ws[1])
        throw ShapeError(std::string(op) + ": channel mismatch, input " + xs.str() + " weight " +
                         ws.str());
    ConvGeom g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], 0, 0, stride, pad};
    g.ho = conv_out_dim(g.h, g.kh, stride, pad);
    g.wo = conv_out_dim(g.w, g.kw, stride, pad);
    if (g.ho < 1 || g.wo < 1)
        throw ShapeError(std::string(op) + ": output would be empty for input " + xs.str());
    return g;
}

}  // namespace detail

template <typename S>
Var<S> conv2d_input_grad(const Var<S>& g, const Var<S>& w, Index stride, Index pad, Index in_h,
                         Index in_w);

template <typename S>
Var<S> conv2d_weight_grad(const Var<S>& x, const Var<S>& g, Index stride, Index pad, Index kh,
                          Index kw);

// y[b,co] = sum_ci x[b,ci] * w[co,ci]  (+ bias), stride/pad as given.
// Pass an undefined Var for a bias-free convolution.
template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, const Var<S>& bias, Index stride, Index pad) {
    auto geom = detail::conv_geometry<S>("conv2d", x.shape(), w.shape(), stride, pad);
    const Index ckk = geom.cin * geom.kh * geom.kw;
    Tensor<S> out(Shape{geom.b, geom.cout, geom.ho, geom.wo});
    detail::ColMatrix<S> cols(ckk, geom.ho * geom.wo);
    typename Tensor<S>::ConstMatrixMap wm(w.value().data(), geom.cout, ckk);
    for (Index bi = 0; bi < geom.b; ++bi) {
        detail::im2col(x.value().data() + bi * geom.cin * geom.h * geom.w, geom.cin, geom.h,
                       geom.w, geom.kh, geom.kw, stride, pad, geom.ho, geom.wo, cols);
        typename Tensor<S>::MatrixMap om(out.data() + bi * geom.cout * geom.ho * geom.wo,
                                         geom.cout, geom.ho * geom.wo);
        om.noalias() = wm * cols;
        if (bias.defined()) {
            if (bias.numel() != geom.cout)
                throw ShapeError("conv2d: bias size does not match output channels");
            for (Index co = 0; co < geom.cout; ++co)
                om.row(co).array() += bias.value()[co];
        }
    }
    std::vector<Var<S>> parents{x, w};
    if (bias.defined()) parents.push_back(bias);
    const bool has_bias = bias.defined();
    const Index kh = geom.kh, kw = geom.kw, in_h = geom.h, in_w = geom.w;
    return Var<S>::op(std::move(out), std::move(parents),
                      [x, w, has_bias, stride, pad, kh, kw, in_h, in_w](const Var<S>& g) {
                          std::vector<Var<S>> grads{
                              conv2d_input_grad(g, w, stride, pad, in_h, in_w),
                              conv2d_weight_grad(x, g, stride, pad, kh, kw)};
                          if (has_bias) grads.push_back(channel_sum(g));
                          return grads;
                      });
}

template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, Index stride, Index pad) {
    return conv2d(x, w, Var<S>{}, stride, pad);
}

// Adjoint of conv2d w.r.t. its input: scatters output-gradients back through
// the convolution geometry (a transposed convolution).
template <typename S>
Var<S> conv2d_input_grad(const Var<S>& g, const Var<S>& w, Index stride, Index pad, Index in_h,
                         Index in_w) {
    const Shape& gs = g.shape();
    const Shape& ws = w.shape();
    if (gs.rank() != 4 || ws.rank() != 4 || gs[1] != ws[0])
        throw ShapeError("conv2d_input_grad: incompatible shapes " + gs.str() + ", " + ws.str());
    const Index b = gs[0], cout = gs[1], ho = gs[2], wo = gs[3];
    const Index cin = ws[1], kh = ws[2], kw = ws[3];
    const Index ckk = cin * kh * kw;
    Tensor<S> out = Tensor<S>::zeros(Shape{b, cin, in_h, in_w});
    detail::ColMatrix<S> cols(ckk, ho * wo);
    typename Tensor<S>::ConstMatrixMap wm(w.value().data(), cout, ckk);
    for (Index bi = 0; bi < b; ++bi) {
        typename Tensor<S>::ConstMatrixMap gm(g.value().data() + bi * cout * ho * wo, cout,
                                              ho * wo);
        cols.noalias() = wm.transpose() * gm;
        detail::col2im_add(cols, cin, in_h, in_w, kh, kw, stride, pad, ho, wo,
                           out.data() + bi * cin * in_h * in_w);
    }
    return Var<S>::op(std::move(out), {g, w},
                      [g, w, stride, pad, kh, kw](const Var<S>& u) {
                          return std::vector<Var<S>>{
                              conv2d(u, w, stride, pad),
                              conv2d_weight_grad(u, g, stride, pad, kh, kw)};
                      });
}

// Adjoint of conv2d w.r.t. its weights.
template <typename S>
Var<S> conv2d_weight_grad(const Var<S>& x, const Var<S>& g, Index stride, Index pad, Index kh,
                          Index kw) {
    const Shape& xs = x.shape();
    const Shape& gs = g.shape();
    if (xs.rank() != 4 || gs.rank() != 4 || xs[0] != gs[0])
        throw ShapeError("conv2d_weight_grad: incompatible shapes " + xs.str() + ", " + gs.str());
    const Index b = xs[0], cin = xs[1], h = xs[2], w = xs[3];
    const Index cout = gs[1], ho = gs[2], wo = gs[3];
    const Index ckk = cin * kh * kw;
    Tensor<S> out = Tensor<S>::zeros(Shape{cout, cin, kh, kw});
    detail::ColMatrix<S> cols(ckk, ho * wo);
    typename Tensor<S>::MatrixMap om(out.data(), cout, ckk);
    for (Index bi = 0; bi < b; ++bi) {
        detail::im2col(x.value().data() + bi * cin * h * w, cin, h, w, kh, kw, stride, pad, ho,
                       wo, cols);
        typename Tensor<S>::ConstMatrixMap gm(g.value().data() + bi * cout * ho * wo, cout,
                                              ho * wo);
        om.noalias() += gm * cols.transpose();
    }
    const Index in_h = h, in_w = w;
    return Var<S>::op(std::move(out), {x, g},
                      [x, g, stride, pad, in_h, in_w](const Var<S>& u) {
                          return std::vector<Var<S>>{
                              conv2d_input_grad(g, u, stride, pad, in_h, in_w),
                              conv2d(x, u, stride, pad)};
                      });
}

// ---------------------------------------------------------------------------
// Composite layers
// ---------------------------------------------------------------------------

template <typename S>
Var<S> mean_per_sample(const Var<S>& a) {
    const Index rest = a.numel() / a.shape()[0];
    return mul_scalar(sum_per_sample(a), S(1) / S(rest));
}

// x (N, in) -> (N, out) with weight (out, in) and bias (out).
template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& w, const Var<S>& bias) {
    Var<S> y = matmul(x, transpose(w));
    if (bias.defined()) y = add(y, broadcast_feature(bias, y.shape()));
    return y;
}

// Linear applied to the last dim of a rank-3 tensor (B, T, in) -> (B, T, out).
template <typename S>
Var<S> linear3(const Var<S>& x, const Var<S>& w, const Var<S>& bias) {
    const Shape& s = x.shape();
    Var<S> flat = reshape(x, Shape{s[0] * s[1], s[2]});
    Var<S> y = linear(flat, w, bias);
    return reshape(y, Shape{s[0], s[1], w.shape()[0]});
}

template <typename S>
Var<S> softmax_lastdim(const Var<S>& a) {
    const Index f = a.shape()[a.rank() - 1];
    const Index rows = a.numel() / f;
    // Subtracting the row max leaves softmax (and all derivatives) unchanged,
    // so the shift can be treated as a constant.
    Tensor<S> mx(detail::lastdim_replaced(a.shape(), 1));
    mx.matrix(rows, 1) = a.value().matrix(rows, f).rowwise().maxCoeff();
    Var<S> z = sub(a, broadcast_lastdim(Var<S>::constant(std::move(mx)), f));
    Var<S> e = exp(z);
    return div(e, broadcast_lastdim(lastdim_sum(e), f));
}

// Per-sample, per-channel normalization over spatial dims with affine params.
template <typename S>
Var<S> instance_norm(const Var<S>& x, const Var<S>& gain, const Var<S>& bias, S eps) {
    const Shape& s = x.shape();
    if (s.rank() != 4) throw ShapeError("instance_norm: rank-4 input required");
    const S inv_n = S(1) / S(s[2] * s[3]);
    Var<S> mu = mul_scalar(spatial_sum(x), inv_n);
    Var<S> xc = sub(x, broadcast_spatial(mu, s[2], s[3]));
    Var<S> var = mul_scalar(spatial_sum(mul(xc, xc)), inv_n);
    Var<S> sd = sqrt(add_scalar(var, eps));
    Var<S> y = div(xc, broadcast_spatial(sd, s[2], s[3]));
    return add(mul(y, broadcast_channel(gain, s)), broadcast_channel(bias, s));
}

// Normalization over the last dimension with affine params (transformer LN).
template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gain, const Var<S>& bias, S eps) {
    const Index f = x.shape()[x.rank() - 1];
    const S inv_n = S(1) / S(f);
    Var<S> mu = mul_scalar(lastdim_sum(x), inv_n);
    Var<S> xc = sub(x, broadcast_lastdim(mu, f));
    Var<S> var = mul_scalar(lastdim_sum(mul(xc, xc)), inv_n);
    Var<S> sd = sqrt(add_scalar(var, eps));
    Var<S> y = div(xc, broadcast_lastdim(sd, f));
    return add(mul(y, broadcast_feature(gain, x.shape())), broadcast_feature(bias, x.shape()));
}

// Mean absolute difference over all elements.
template <typename S>
Var<S> l1_loss(const Var<S>& a, const Var<S>& b) {
    detail::check_same_shape("l1_loss", a.value(), b.value());
    return mean_all(abs(sub(a, b)));
}

}  // namespace uvcgan
