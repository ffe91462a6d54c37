#pragma once

// Image-space transforms on (channels, height, width) tensors in [0, 1]:
// bilinear resize, crops, flips, small rotations, color jitter, and the two
// train-time augmentation protocols plus the evaluation preprocessing.

#include <cmath>
#include <iostream>
#include <string>

#include "uvcgan/core/error.hpp"
#include "uvcgan/core/rng.hpp"
#include "uvcgan/core/tensor.hpp"

namespace uvcgan {

namespace detail {

template <typename S>
void check_chw(const Tensor<S>& x, const char* who) {
    if (x.rank() != 3) throw ShapeError(std::string(who) + ": expected (channels, h, w)");
    if (x.shape()[1] <= 0 || x.shape()[2] <= 0)
        throw ShapeError(std::string(who) + ": degenerate image");
}

inline Index clamp_index(Index v, Index lo, Index hi) {
    return v < lo ? lo : (v > hi ? hi : v);
}

}  // namespace detail

// Half-pixel-center bilinear resampling with edge clamping.
template <typename S>
Tensor<S> resize_bilinear(const Tensor<S>& x, Index out_h, Index out_w) {
    detail::check_chw(x, "resize_bilinear");
    if (out_h <= 0 || out_w <= 0) throw ShapeError("resize_bilinear: output dims must be positive");
    const Index c = x.shape()[0], in_h = x.shape()[1], in_w = x.shape()[2];
    if (out_h == in_h && out_w == in_w) return x;

    Tensor<S> out(Shape{c, out_h, out_w});
    const double sy = double(in_h) / double(out_h);
    const double sx = double(in_w) / double(out_w);
    for (Index oy = 0; oy < out_h; ++oy) {
        double fy = (double(oy) + 0.5) * sy - 0.5;
        fy = fy < 0 ? 0 : (fy > double(in_h - 1) ? double(in_h - 1) : fy);
        const Index y0 = Index(std::floor(fy));
        const Index y1 = detail::clamp_index(y0 + 1, 0, in_h - 1);
        const double wy = fy - double(y0);
        for (Index ox = 0; ox < out_w; ++ox) {
            double fx = (double(ox) + 0.5) * sx - 0.5;
            fx = fx < 0 ? 0 : (fx > double(in_w - 1) ? double(in_w - 1) : fx);
            const Index x0 = Index(std::floor(fx));
            const Index x1 = detail::clamp_index(x0 + 1, 0, in_w - 1);
            const double wx = fx - double(x0);
            for (Index ch = 0; ch < c; ++ch) {
                const double top =
                    (1 - wx) * double(x.at(ch, y0, x0)) + wx * double(x.at(ch, y0, x1));
                const double bot =
                    (1 - wx) * double(x.at(ch, y1, x0)) + wx * double(x.at(ch, y1, x1));
                out.at(ch, oy, ox) = S((1 - wy) * top + wy * bot);
            }
        }
    }
    return out;
}

template <typename S>
Tensor<S> crop(const Tensor<S>& x, Index top, Index left, Index h, Index w) {
    detail::check_chw(x, "crop");
    if (h <= 0 || w <= 0 || top < 0 || left < 0 || top + h > x.shape()[1] ||
        left + w > x.shape()[2])
        throw ShapeError("crop: window out of bounds");
    Tensor<S> out(Shape{x.shape()[0], h, w});
    for (Index c = 0; c < x.shape()[0]; ++c)
        for (Index y = 0; y < h; ++y)
            for (Index xx = 0; xx < w; ++xx) out.at(c, y, xx) = x.at(c, top + y, left + xx);
    return out;
}

template <typename S>
Tensor<S> central_crop(const Tensor<S>& x, Index h, Index w) {
    detail::check_chw(x, "central_crop");
    return crop(x, (x.shape()[1] - h) / 2, (x.shape()[2] - w) / 2, h, w);
}

template <typename S>
Tensor<S> random_crop(const Tensor<S>& x, Index h, Index w, Rng& rng) {
    detail::check_chw(x, "random_crop");
    if (h > x.shape()[1] || w > x.shape()[2]) throw ShapeError("random_crop: window too large");
    const Index top = Index(rng.uniform_index(std::uint64_t(x.shape()[1] - h + 1)));
    const Index left = Index(rng.uniform_index(std::uint64_t(x.shape()[2] - w + 1)));
    return crop(x, top, left, h, w);
}

template <typename S>
Tensor<S> hflip(const Tensor<S>& x) {
    detail::check_chw(x, "hflip");
    Tensor<S> out(x.shape());
    const Index w = x.shape()[2];
    for (Index c = 0; c < x.shape()[0]; ++c)
        for (Index y = 0; y < x.shape()[1]; ++y)
            for (Index xx = 0; xx < w; ++xx) out.at(c, y, xx) = x.at(c, y, w - 1 - xx);
    return out;
}

template <typename S>
Tensor<S> maybe_hflip(const Tensor<S>& x, Rng& rng) {
    return rng.bernoulli(0.5) ? hflip(x) : x;
}

// Rotation about the image center, bilinear with edge clamping.
template <typename S>
Tensor<S> rotate(const Tensor<S>& x, double degrees) {
    detail::check_chw(x, "rotate");
    const Index c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    const double rad = degrees * M_PI / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cy = 0.5 * double(h - 1), cx = 0.5 * double(w - 1);

    Tensor<S> out(x.shape());
    for (Index oy = 0; oy < h; ++oy)
        for (Index ox = 0; ox < w; ++ox) {
            const double dy = double(oy) - cy, dx = double(ox) - cx;
            double fy = cy + cs * dy - sn * dx;
            double fx = cx + sn * dy + cs * dx;
            fy = fy < 0 ? 0 : (fy > double(h - 1) ? double(h - 1) : fy);
            fx = fx < 0 ? 0 : (fx > double(w - 1) ? double(w - 1) : fx);
            const Index y0 = Index(std::floor(fy));
            const Index y1 = detail::clamp_index(y0 + 1, 0, h - 1);
            const Index x0 = Index(std::floor(fx));
            const Index x1 = detail::clamp_index(x0 + 1, 0, w - 1);
            const double wy = fy - double(y0);
            const double wx = fx - double(x0);
            for (Index ch = 0; ch < c; ++ch) {
                const double top =
                    (1 - wx) * double(x.at(ch, y0, x0)) + wx * double(x.at(ch, y0, x1));
                const double bot =
                    (1 - wx) * double(x.at(ch, y1, x0)) + wx * double(x.at(ch, y1, x1));
                out.at(ch, oy, ox) = S((1 - wy) * top + wy * bot);
            }
        }
    return out;
}

// Brightness/contrast/saturation jitter, each factor uniform in
// [1-strength, 1+strength], result clamped back to [0, 1].
template <typename S>
Tensor<S> color_jitter(const Tensor<S>& x, Rng& rng, double strength = 0.2) {
    detail::check_chw(x, "color_jitter");
    if (x.shape()[0] != 3) throw ShapeError("color_jitter: expected RGB");
    const double fb = rng.uniform(1 - strength, 1 + strength);
    const double fc = rng.uniform(1 - strength, 1 + strength);
    const double fs = rng.uniform(1 - strength, 1 + strength);

    const Index hw = x.shape()[1] * x.shape()[2];
    double mean = 0;
    for (Index i = 0; i < x.numel(); ++i) mean += double(x[i]);
    mean /= double(x.numel());

    Tensor<S> out(x.shape());
    for (Index p = 0; p < hw; ++p) {
        const double r = double(x[0 * hw + p]), g = double(x[1 * hw + p]),
                     b = double(x[2 * hw + p]);
        const double luma = 0.299 * r + 0.587 * g + 0.114 * b;
        double ch[3] = {r, g, b};
        for (int c = 0; c < 3; ++c) {
            double v = luma + fs * (ch[c] - luma);     // saturation about luma
            v = mean + fc * (v - mean);                // contrast about the mean
            v *= fb;                                   // brightness
            out[Index(c) * hw + p] = S(v < 0 ? 0 : (v > 1 ? 1 : v));
        }
    }
    return out;
}

enum class AugmentTask { square, celeba };

struct AugmentConfig {
    AugmentTask task = AugmentTask::square;
    Index size_scale = 1;  // divides every protocol size (desk-scale runs)
    bool strict = true;    // reject off-protocol inputs instead of resizing them

    Index scaled(Index v) const {
        if (size_scale <= 0) throw ConfigError("augment: size_scale must be positive");
        const Index s = Index(std::llround(double(v) / double(size_scale)));
        return s < 1 ? 1 : s;
    }
    Index output_size() const { return scaled(256); }

    bool operator==(const AugmentConfig&) const = default;
};

// Train-time protocol: enlarge, random-crop back to the working resolution,
// random horizontal flip.
//   square: 256x256 -> 286x286 -> crop 256
//   celeba: 178x218 -> 256x313 -> crop 256
template <typename S>
Tensor<S> augment_train(const Tensor<S>& x, const AugmentConfig& cfg, Rng& rng) {
    detail::check_chw(x, "augment_train");

    Index in_w, in_h, mid_w, mid_h;
    if (cfg.task == AugmentTask::square) {
        in_w = in_h = cfg.scaled(256);
        mid_w = mid_h = cfg.scaled(286);
    } else {
        in_w = cfg.scaled(178);
        in_h = cfg.scaled(218);
        mid_w = cfg.scaled(256);
        mid_h = cfg.scaled(313);
    }

    Tensor<S> img = x;
    if (x.shape()[1] != in_h || x.shape()[2] != in_w) {
        if (cfg.strict)
            throw ShapeError("augment_train: expected " + std::to_string(in_w) + "x" +
                             std::to_string(in_h) + " input, got " + std::to_string(x.shape()[2]) +
                             "x" + std::to_string(x.shape()[1]));
        std::clog << "augment_train: resizing off-protocol input " << x.shape()[2] << "x"
                  << x.shape()[1] << " to " << in_w << "x" << in_h << "\n";
        img = resize_bilinear(x, in_h, in_w);
    }

    img = resize_bilinear(img, mid_h, mid_w);
    img = random_crop(img, cfg.output_size(), cfg.output_size(), rng);
    return maybe_hflip(img, rng);
}

// Evaluation protocol: aspect-preserving resize of the shorter side to
// `size`, then a central size x size crop.  Conforming inputs pass through
// untouched, so the map is idempotent.
template <typename S>
Tensor<S> eval_preprocess(const Tensor<S>& x, Index size = 256) {
    detail::check_chw(x, "eval_preprocess");
    if (size <= 0) throw ShapeError("eval_preprocess: size must be positive");
    const Index h = x.shape()[1], w = x.shape()[2];
    if (h == size && w == size) return x;

    const Index shorter = h < w ? h : w;
    const double scale = double(size) / double(shorter);
    Index nh = Index(std::llround(double(h) * scale));
    Index nw = Index(std::llround(double(w) * scale));
    if (nh < size) nh = size;
    if (nw < size) nw = size;
    return central_crop(resize_bilinear(x, nh, nw), size, size);
}

}  // namespace uvcgan
