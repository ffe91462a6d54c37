#pragma once

// UNet generator with a pixel-wise vision-transformer bottleneck.
//
// Input runs through a width-expanding conv stem, `levels` encoder stages
// (basic block + stride-2 downsampling conv), a token transformer over the
// coarsest feature map, and a mirrored decoder that upsamples and re-joins
// the pre-downsampling skip maps by channel concatenation.  A 1x1 conv and
// sigmoid map back to image space, so outputs live in (0, 1).
//
// The transformer blocks are residual with a learned scalar gate that starts
// at zero, so right after init the bottleneck reduces to the two token
// projections and the network behaves like a plain UNet.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "uvcgan/core/error.hpp"
#include "uvcgan/layers.hpp"

namespace uvcgan {

struct GeneratorConfig {
    Index in_channels = 3;
    Index base_features = 48;    // width of the conv stem
    Index levels = 4;            // encoder/decoder stages, each halves H and W
    Index token_features = 384;  // channels of the coarsest map, = base << (levels-1)
    Index pe_features = 384;     // Fourier position embedding width
    Index vit_features = 384;    // transformer model width
    Index ffn_features = 1536;   // transformer feed-forward hidden width
    Index vit_blocks = 12;
    Index heads = 6;
    double leaky_slope = 0.2;

    // Input H and W must be multiples of this.
    Index spatial_divisor() const { return Index(1) << levels; }

    void validate() const {
        auto positive = [](Index v, const char* what) {
            if (v <= 0) throw ConfigError(std::string("generator: ") + what + " must be positive");
        };
        positive(in_channels, "in_channels");
        positive(base_features, "base_features");
        positive(levels, "levels");
        positive(token_features, "token_features");
        positive(pe_features, "pe_features");
        positive(vit_features, "vit_features");
        positive(ffn_features, "ffn_features");
        positive(vit_blocks, "vit_blocks");
        positive(heads, "heads");
        if (levels > 30) throw ConfigError("generator: levels out of range");
        if (token_features != base_features << (levels - 1))
            throw ConfigError(
                "generator: token_features must equal base_features * 2^(levels-1), got " +
                std::to_string(token_features) + " for base " + std::to_string(base_features) +
                " and " + std::to_string(levels) + " levels");
        if (vit_features % heads != 0)
            throw ConfigError("generator: vit_features must be divisible by heads");
        if (!(leaky_slope >= 0.0 && leaky_slope < 1.0))
            throw ConfigError("generator: leaky_slope must lie in [0, 1)");
    }

    bool operator==(const GeneratorConfig&) const = default;
};

template <typename S>
class Generator {
public:
    Generator(const GeneratorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(seed);
        build(rng);
    }

    const GeneratorConfig& config() const { return cfg_; }
    ParamSet<S>& params() { return params_; }
    const ParamSet<S>& params() const { return params_; }

    // Stem + encoder stages.  Returns the coarsest map (B, token_features,
    // H/2^levels, W/2^levels) and one pre-downsampling skip map per level.
    std::pair<Var<S>, std::vector<Var<S>>> encode(const Var<S>& x) const {
        check_input(x);
        Var<S> h = leaky_relu(pre_(x), S(cfg_.leaky_slope));
        std::vector<Var<S>> skips;
        skips.reserve(static_cast<std::size_t>(cfg_.levels));
        for (Index i = 0; i < cfg_.levels; ++i) {
            h = enc_[static_cast<std::size_t>(i)](h);
            skips.push_back(h);
            h = down_[static_cast<std::size_t>(i)](h);
        }
        return {h, std::move(skips)};
    }

    // Sinusoidal embedding of normalized cell-center coordinates: token t at
    // grid position (y, x) (row-major, t = y*w + x) gets
    // sin(W [2(x+.5)/w - 1, 2(y+.5)/h - 1] + b).  Shape (w*h, pe_features).
    Var<S> fourier_position_embedding(Index w, Index h) const {
        if (w <= 0 || h <= 0)
            throw ShapeError("position embedding: grid dims must be positive");
        Tensor<S> coords(Shape{h * w, 2});
        for (Index y = 0; y < h; ++y)
            for (Index x = 0; x < w; ++x) {
                const Index t = y * w + x;
                coords[2 * t + 0] = S(2) * (S(x) + S(0.5)) / S(w) - S(1);
                coords[2 * t + 1] = S(2) * (S(y) + S(0.5)) / S(h) - S(1);
            }
        return sin(pe_lin_(Var<S>::constant(std::move(coords))));
    }

    // The rezero transformer alone: (B, T, vit_features) -> same shape.
    Var<S> transformer_stack(const Var<S>& tokens) const {
        if (tokens.rank() != 3 || tokens.shape()[2] != cfg_.vit_features)
            throw ShapeError("transformer_stack: expected (batch, tokens, vit_features)");
        Var<S> t = tokens;
        for (const auto& blk : blocks_) {
            t = add(t, gate(blk, attention(blk, blk.ln1(t))));
            t = add(t, gate(blk, feed_forward(blk, blk.ln2(t))));
        }
        return t;
    }

    // Flatten the coarsest map to tokens, mix in the position embedding, run
    // the transformer, and fold back to (B, token_features, h, w).
    Var<S> vit_bottleneck(const Var<S>& feat) const {
        if (feat.rank() != 4 || feat.shape()[1] != cfg_.token_features)
            throw ShapeError("vit_bottleneck: expected (batch, token_features, h, w)");
        const Index b = feat.shape()[0], hh = feat.shape()[2], ww = feat.shape()[3];
        const Index t = hh * ww;

        Var<S> tokens = bt(reshape(feat, Shape{b, cfg_.token_features, t}));
        Var<S> pe = repeat_batch(fourier_position_embedding(ww, hh), b);
        Var<S> mixed = vit_in_.tokens(concat_lastdim(tokens, pe));
        Var<S> out = vit_out_.tokens(transformer_stack(mixed));
        return reshape(bt(out), Shape{b, cfg_.token_features, hh, ww});
    }

    // Decoder: per level upsample, halve channels, concat the skip map, and
    // run a basic block; a 1x1 conv plus sigmoid produces the image.
    Var<S> decode(const Var<S>& bottom, const std::vector<Var<S>>& skips) const {
        if (skips.size() != static_cast<std::size_t>(cfg_.levels))
            throw ShapeError("decode: expected one skip map per level");
        Var<S> h = bottom;
        for (Index i = cfg_.levels - 1; i >= 0; --i) {
            h = up_[static_cast<std::size_t>(i)](upsample_nearest2(h));
            h = concat_channels(h, skips[static_cast<std::size_t>(i)]);
            h = dec_[static_cast<std::size_t>(i)](h);
        }
        return sigmoid(post_(h));
    }

    Var<S> forward(const Var<S>& x) const {
        auto [bottom, skips] = encode(x);
        return decode(vit_bottleneck(bottom), skips);
    }

    Var<S> operator()(const Var<S>& x) const { return forward(x); }

private:
    struct VitBlock {
        LayerNormLayer<S> ln1, ln2;
        LinearLayer<S> q, k, v, o, ffn1, ffn2;
        Var<S> alpha;  // residual gate, zero at init
    };

    // Output channels of encoder stage i (0-based); stage 0 keeps the stem
    // width, deeper stages double it.
    Index enc_out(Index i) const {
        return i == 0 ? cfg_.base_features : cfg_.base_features << i;
    }
    Index enc_in(Index i) const {
        return i == 0 ? cfg_.base_features : cfg_.base_features << (i - 1);
    }
    // Output channels of decoder stage i; the deepest stage mirrors the
    // bottleneck width, shallower ones mirror the encoder.
    Index dec_out(Index i) const {
        return i == cfg_.levels - 1 ? cfg_.token_features : cfg_.base_features << i;
    }
    // Channels arriving at decoder stage i from below.
    Index dec_below(Index i) const {
        return i == cfg_.levels - 1 ? cfg_.token_features : dec_out(i + 1);
    }

    void build(Rng& rng) {
        const Index f0 = cfg_.base_features;
        pre_ = Conv2dLayer<S>::create(params_, "pre", cfg_.in_channels, f0, 3, 1, 1, rng);

        for (Index i = 0; i < cfg_.levels; ++i) {
            const std::string tag = std::to_string(i + 1);
            enc_.push_back(BasicBlock<S>::create(params_, "enc" + tag, enc_in(i), enc_out(i),
                                                 S(cfg_.leaky_slope), rng));
            down_.push_back(
                Conv2dLayer<S>::create(params_, "down" + tag, enc_out(i), enc_out(i), 2, 2, 0, rng));
        }

        pe_lin_ = LinearLayer<S>::create(params_, "vit.pe", 2, cfg_.pe_features, rng);
        vit_in_ = LinearLayer<S>::create(params_, "vit.in",
                                         cfg_.token_features + cfg_.pe_features,
                                         cfg_.vit_features, rng);
        for (Index i = 0; i < cfg_.vit_blocks; ++i) {
            const std::string base = "vit.blk" + std::to_string(i);
            VitBlock blk;
            blk.ln1 = LayerNormLayer<S>::create(params_, base + ".ln1", cfg_.vit_features);
            blk.q = LinearLayer<S>::create(params_, base + ".q", cfg_.vit_features,
                                           cfg_.vit_features, rng);
            blk.k = LinearLayer<S>::create(params_, base + ".k", cfg_.vit_features,
                                           cfg_.vit_features, rng);
            blk.v = LinearLayer<S>::create(params_, base + ".v", cfg_.vit_features,
                                           cfg_.vit_features, rng);
            blk.o = LinearLayer<S>::create(params_, base + ".o", cfg_.vit_features,
                                           cfg_.vit_features, rng);
            blk.ln2 = LayerNormLayer<S>::create(params_, base + ".ln2", cfg_.vit_features);
            blk.ffn1 = LinearLayer<S>::create(params_, base + ".ffn1", cfg_.vit_features,
                                              cfg_.ffn_features, rng);
            blk.ffn2 = LinearLayer<S>::create(params_, base + ".ffn2", cfg_.ffn_features,
                                              cfg_.vit_features, rng);
            blk.alpha = params_.create(base + ".alpha", Tensor<S>::zeros(Shape{1}));
            blocks_.push_back(std::move(blk));
        }
        vit_out_ = LinearLayer<S>::create(params_, "vit.out", cfg_.vit_features,
                                          cfg_.token_features, rng);

        up_.resize(static_cast<std::size_t>(cfg_.levels));
        dec_.resize(static_cast<std::size_t>(cfg_.levels));
        for (Index i = cfg_.levels - 1; i >= 0; --i) {
            const std::string tag = std::to_string(i + 1);
            up_[static_cast<std::size_t>(i)] = Conv2dLayer<S>::create(
                params_, "up" + tag, dec_below(i), dec_below(i) / 2, 3, 1, 1, rng);
            dec_[static_cast<std::size_t>(i)] =
                BasicBlock<S>::create(params_, "dec" + tag, dec_below(i) / 2 + enc_out(i),
                                      dec_out(i), S(cfg_.leaky_slope), rng);
        }

        post_ = Conv2dLayer<S>::create(params_, "post", dec_out(0), cfg_.in_channels, 1, 1, 0, rng);
    }

    void check_input(const Var<S>& x) const {
        if (x.rank() != 4)
            throw ShapeError("generator: expected rank-4 input (batch, channels, h, w)");
        const Shape& s = x.shape();
        if (s[1] != cfg_.in_channels)
            throw ShapeError("generator: expected " + std::to_string(cfg_.in_channels) +
                             " input channels, got " + std::to_string(s[1]));
        const Index div = cfg_.spatial_divisor();
        if (s[2] <= 0 || s[3] <= 0 || s[2] % div != 0 || s[3] % div != 0)
            throw ShapeError("generator: input height and width must be positive multiples of " +
                             std::to_string(div) + ", got " + std::to_string(s[2]) + "x" +
                             std::to_string(s[3]));
        if (!x.value().all_finite())
            throw ValueError("generator: input contains NaN or Inf");
    }

    Var<S> gate(const VitBlock& blk, const Var<S>& branch) const {
        return mul(branch, broadcast_all(blk.alpha, branch.shape()));
    }

    Var<S> attention(const VitBlock& blk, const Var<S>& t) const {
        const Index b = t.shape()[0], n = t.shape()[1];
        const Index heads = cfg_.heads, dh = cfg_.vit_features / heads;
        auto split = [&](const Var<S>& u) {
            return reshape(permute4(reshape(u, Shape{b, n, heads, dh}), {0, 2, 1, 3}),
                           Shape{b * heads, n, dh});
        };
        Var<S> scores = mul_scalar(bmm(split(blk.q.tokens(t)), bt(split(blk.k.tokens(t)))),
                                   S(1) / std::sqrt(S(dh)));
        Var<S> ctx = bmm(softmax_lastdim(scores), split(blk.v.tokens(t)));
        Var<S> merged = reshape(permute4(reshape(ctx, Shape{b, heads, n, dh}), {0, 2, 1, 3}),
                                Shape{b, n, cfg_.vit_features});
        return blk.o.tokens(merged);
    }

    Var<S> feed_forward(const VitBlock& blk, const Var<S>& t) const {
        return blk.ffn2.tokens(gelu(blk.ffn1.tokens(t)));
    }

    GeneratorConfig cfg_;
    ParamSet<S> params_;
    Conv2dLayer<S> pre_, post_;
    std::vector<BasicBlock<S>> enc_, dec_;
    std::vector<Conv2dLayer<S>> down_, up_;
    LinearLayer<S> pe_lin_, vit_in_, vit_out_;
    std::vector<VitBlock> blocks_;
};

}  // namespace uvcgan
