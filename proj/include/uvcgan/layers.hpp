#pragma once

// Small trainable layer structs shared by the generator and discriminator.
// Each `create` registers its parameters (init: truncated normal std 0.02 for
// weights, zeros for biases, ones for norm gains) and returns a value-type
// handle whose call operator applies the layer.

#include <string>

#include "uvcgan/core/ops.hpp"
#include "uvcgan/core/params.hpp"

namespace uvcgan {

inline constexpr double kWeightInitStd = 0.02;
inline constexpr double kNormEps = 1e-5;

template <typename S>
struct Conv2dLayer {
    Var<S> w, b;
    Index stride = 1, pad = 0;

    static Conv2dLayer create(ParamSet<S>& ps, const std::string& name, Index cin, Index cout,
                              Index k, Index stride, Index pad, Rng& rng) {
        Conv2dLayer l;
        l.w = ps.create(name + ".w",
                        trunc_normal_init<S>(Shape{cout, cin, k, k}, S(kWeightInitStd), rng));
        l.b = ps.create(name + ".b", Tensor<S>::zeros(Shape{cout}));
        l.stride = stride;
        l.pad = pad;
        return l;
    }

    Var<S> operator()(const Var<S>& x) const { return conv2d(x, w, b, stride, pad); }
};

template <typename S>
struct LinearLayer {
    Var<S> w, b;

    static LinearLayer create(ParamSet<S>& ps, const std::string& name, Index fin, Index fout,
                              Rng& rng) {
        LinearLayer l;
        l.w = ps.create(name + ".w",
                        trunc_normal_init<S>(Shape{fout, fin}, S(kWeightInitStd), rng));
        l.b = ps.create(name + ".b", Tensor<S>::zeros(Shape{fout}));
        return l;
    }

    Var<S> operator()(const Var<S>& x) const { return linear(x, w, b); }
    // Same map applied over the last dim of (batch, tokens, features).
    Var<S> tokens(const Var<S>& x) const { return linear3(x, w, b); }
};

template <typename S>
struct InstanceNormLayer {
    Var<S> g, b;

    static InstanceNormLayer create(ParamSet<S>& ps, const std::string& name, Index channels) {
        InstanceNormLayer l;
        l.g = ps.create(name + ".g", Tensor<S>::full(Shape{channels}, S(1)));
        l.b = ps.create(name + ".b", Tensor<S>::zeros(Shape{channels}));
        return l;
    }

    Var<S> operator()(const Var<S>& x) const { return instance_norm(x, g, b, S(kNormEps)); }
};

template <typename S>
struct LayerNormLayer {
    Var<S> g, b;

    static LayerNormLayer create(ParamSet<S>& ps, const std::string& name, Index features) {
        LayerNormLayer l;
        l.g = ps.create(name + ".g", Tensor<S>::full(Shape{features}, S(1)));
        l.b = ps.create(name + ".b", Tensor<S>::zeros(Shape{features}));
        return l;
    }

    Var<S> operator()(const Var<S>& x) const { return layer_norm(x, g, b, S(kNormEps)); }
};

// UNet basic block: (InstanceNorm -> Conv3x3 -> LeakyReLU) x2, channel change
// in the first conv.
template <typename S>
struct BasicBlock {
    InstanceNormLayer<S> n1, n2;
    Conv2dLayer<S> c1, c2;
    S slope = S(0.2);

    static BasicBlock create(ParamSet<S>& ps, const std::string& name, Index cin, Index cout,
                             S slope, Rng& rng) {
        BasicBlock blk;
        blk.n1 = InstanceNormLayer<S>::create(ps, name + ".norm1", cin);
        blk.c1 = Conv2dLayer<S>::create(ps, name + ".conv1", cin, cout, 3, 1, 1, rng);
        blk.n2 = InstanceNormLayer<S>::create(ps, name + ".norm2", cout);
        blk.c2 = Conv2dLayer<S>::create(ps, name + ".conv2", cout, cout, 3, 1, 1, rng);
        blk.slope = slope;
        return blk;
    }

    Var<S> operator()(const Var<S>& x) const {
        Var<S> h = leaky_relu(c1(n1(x)), slope);
        return leaky_relu(c2(n2(h)), slope);
    }
};

}  // namespace uvcgan
