#pragma once

// PatchGAN discriminator: a stack of 4x4 convs that maps an image to a grid
// of per-patch realness scores.  With the defaults (base 64, 3 strided
// layers) each output cell sees a 70x70 receptive field and a 256x256 input
// yields a 30x30 score map.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "uvcgan/core/error.hpp"
#include "uvcgan/layers.hpp"

namespace uvcgan {

struct DiscriminatorConfig {
    Index in_channels = 3;
    Index base_channels = 64;
    Index n_layers = 3;  // stride-2 stages after the first conv
    double leaky_slope = 0.2;

    void validate() const {
        if (in_channels <= 0 || base_channels <= 0 || n_layers <= 0)
            throw ConfigError("discriminator: channels and n_layers must be positive");
        if (n_layers > 16) throw ConfigError("discriminator: n_layers out of range");
        if (!(leaky_slope >= 0.0 && leaky_slope < 1.0))
            throw ConfigError("discriminator: leaky_slope must lie in [0, 1)");
    }

    bool operator==(const DiscriminatorConfig&) const = default;
};

template <typename S>
class Discriminator {
public:
    Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(seed);
        build(rng);
    }

    const DiscriminatorConfig& config() const { return cfg_; }
    ParamSet<S>& params() { return params_; }
    const ParamSet<S>& params() const { return params_; }

    // (B, in_channels, H, W) -> (B, 1, H', W') patch scores, unbounded.
    Var<S> forward(const Var<S>& x) const {
        check_input(x);
        Var<S> h = leaky_relu(convs_[0](x), S(cfg_.leaky_slope));
        for (std::size_t i = 1; i < convs_.size() - 1; ++i)
            h = leaky_relu(norms_[i - 1](convs_[i](h)), S(cfg_.leaky_slope));
        return convs_.back()(h);
    }

    Var<S> operator()(const Var<S>& x) const { return forward(x); }

    // Smallest input for which every conv still has a valid output cell.
    Index min_input_size() const {
        // Walk the chain backwards from a 1x1 output.
        Index size = 1;
        size = size - 1 + 4 - 2;              // head, stride 1 pad 1
        size = size - 1 + 4 - 2;              // last stride-1 stage
        for (Index i = 0; i < cfg_.n_layers; ++i) size = 2 * (size - 1) + 4 - 2;
        return size;
    }

private:
    Index width(Index stage) const {
        return cfg_.base_channels * std::min<Index>(Index(1) << stage, 8);
    }

    void build(Rng& rng) {
        Index cin = cfg_.in_channels;
        convs_.push_back(
            Conv2dLayer<S>::create(params_, "conv0", cin, width(0), 4, 2, 1, rng));
        cin = width(0);
        for (Index i = 1; i <= cfg_.n_layers; ++i) {
            const Index stride = i < cfg_.n_layers ? 2 : 1;
            const std::string tag = std::to_string(i);
            convs_.push_back(
                Conv2dLayer<S>::create(params_, "conv" + tag, cin, width(i), 4, stride, 1, rng));
            norms_.push_back(InstanceNormLayer<S>::create(params_, "norm" + tag, width(i)));
            cin = width(i);
        }
        convs_.push_back(Conv2dLayer<S>::create(params_, "head", cin, 1, 4, 1, 1, rng));
    }

    void check_input(const Var<S>& x) const {
        if (x.rank() != 4)
            throw ShapeError("discriminator: expected rank-4 input (batch, channels, h, w)");
        const Shape& s = x.shape();
        if (s[1] != cfg_.in_channels)
            throw ShapeError("discriminator: expected " + std::to_string(cfg_.in_channels) +
                             " input channels, got " + std::to_string(s[1]));
        const Index lo = min_input_size();
        if (s[2] < lo || s[3] < lo)
            throw ShapeError("discriminator: input must be at least " + std::to_string(lo) + "x" +
                             std::to_string(lo) + ", got " + std::to_string(s[2]) + "x" +
                             std::to_string(s[3]));
        if (!x.value().all_finite())
            throw ValueError("discriminator: input contains NaN or Inf");
    }

    DiscriminatorConfig cfg_;
    ParamSet<S> params_;
    std::vector<Conv2dLayer<S>> convs_;
    std::vector<InstanceNormLayer<S>> norms_;
};

}  // namespace uvcgan
