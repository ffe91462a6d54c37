#pragma once

// Self-supervised generator warm-up: zero out random image patches and train
// the generator to restore the original picture under a whole-image l1 loss,
// with cosine-annealed Adam.

#include <cmath>
#include <cstdint>
#include <utility>

#include "uvcgan/core/optim.hpp"
#include "uvcgan/generator.hpp"

namespace uvcgan {

struct MaskSpec {
    Index patch_size = 32;
    double mask_prob = 0.40;

    void validate() const {
        if (patch_size <= 0) throw ConfigError("mask: patch_size must be positive");
        if (!(mask_prob >= 0.0 && mask_prob <= 1.0))
            throw ConfigError("mask: mask_prob must lie in [0, 1]");
    }

    bool operator==(const MaskSpec&) const = default;
};

// Tiles (B, C, H, W) into patch_size squares and zeroes each independently
// with probability mask_prob.  One RNG draw per patch in (batch, row, col)
// order.  Returns the masked image and a (B, gh, gw) grid of 0/1 flags.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> mask_patches(const Tensor<S>& x, const MaskSpec& spec, Rng& rng) {
    spec.validate();
    if (x.rank() != 4) throw ShapeError("mask_patches: expected (batch, channels, h, w)");
    const Index b = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    if (h % spec.patch_size != 0 || w % spec.patch_size != 0)
        throw ShapeError("mask_patches: image dims must be divisible by patch_size " +
                         std::to_string(spec.patch_size));

    const Index gh = h / spec.patch_size, gw = w / spec.patch_size;
    Tensor<S> masked = x;
    Tensor<S> grid = Tensor<S>::zeros(Shape{b, gh, gw});

    for (Index bi = 0; bi < b; ++bi)
        for (Index gy = 0; gy < gh; ++gy)
            for (Index gx = 0; gx < gw; ++gx) {
                if (!rng.bernoulli(spec.mask_prob)) continue;
                grid.at(bi, gy, gx) = S(1);
                for (Index ci = 0; ci < c; ++ci)
                    for (Index py = 0; py < spec.patch_size; ++py) {
                        const Index y = gy * spec.patch_size + py;
                        const Index row = ((bi * c + ci) * h + y) * w + gx * spec.patch_size;
                        for (Index px = 0; px < spec.patch_size; ++px) masked[row + px] = S(0);
                    }
            }
    return {std::move(masked), std::move(grid)};
}

// lr_max * (1 + cos(pi * step / total)) / 2: starts at lr_max, ends at 0.
inline double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr_max) {
    if (total_steps <= 0) throw ValueError("cosine_lr: total_steps must be positive");
    if (step < 0 || step > total_steps)
        throw ValueError("cosine_lr: step outside [0, total_steps]");
    return lr_max * (1.0 + std::cos(M_PI * double(step) / double(total_steps))) / 2.0;
}

struct PretrainConfig {
    MaskSpec mask;
    double lr = 1e-4;  // schedule peak
    std::int64_t total_steps = 1000;
    std::uint64_t seed = 0;

    void validate() const {
        mask.validate();
        if (lr <= 0) throw ConfigError("pretrain: lr must be positive");
        if (total_steps <= 0) throw ConfigError("pretrain: total_steps must be positive");
    }

    bool operator==(const PretrainConfig&) const = default;
};

template <typename S>
class Pretrainer {
public:
    Pretrainer(const GeneratorConfig& gcfg, const PretrainConfig& cfg)
        : cfg_(cfg),
          gen_(gcfg, Rng::stream(cfg.seed, "pretrain.init").next()),
          opt_(gen_.params().vars(), AdamConfig<S>{S(cfg.lr), S(0.9), S(0.999), S(1e-8)}),
          mask_rng_(Rng::stream(cfg.seed, "pretrain.mask")),
          data_rng_(Rng::stream(cfg.seed, "pretrain.data")) {
        cfg_.validate();
    }

    // One masked-restoration update.  The optimizer state only advances when
    // the loss is finite; a NaN/Inf loss aborts with the weights untouched.
    S step(const Tensor<S>& batch) {
        if (iteration_ >= cfg_.total_steps)
            throw ValueError("pretrain: schedule exhausted after " +
                             std::to_string(cfg_.total_steps) + " steps");

        auto [masked, grid] = mask_patches(batch, cfg_.mask, mask_rng_);
        (void)grid;
        Var<S> restored = gen_.forward(Var<S>::constant(std::move(masked)));
        Var<S> loss = l1_loss(restored, Var<S>::constant(batch));

        const S loss_value = loss.value()[0];
        if (!std::isfinite(double(loss_value)))
            throw NumericError("pretrain: non-finite loss at iteration " +
                               std::to_string(iteration_));

        GradMap<S> grads = backward(loss);
        opt_.set_lr(S(cosine_lr(iteration_, cfg_.total_steps, cfg_.lr)));
        opt_.step(grads);
        ++iteration_;
        return loss_value;
    }

    const PretrainConfig& config() const { return cfg_; }
    Generator<S>& generator() { return gen_; }
    const Generator<S>& generator() const { return gen_; }
    Adam<S>& optimizer() { return opt_; }
    const Adam<S>& optimizer() const { return opt_; }
    Rng& mask_rng() { return mask_rng_; }
    const Rng& mask_rng() const { return mask_rng_; }
    Rng& data_rng() { return data_rng_; }
    const Rng& data_rng() const { return data_rng_; }
    std::int64_t iteration() const { return iteration_; }
    void set_iteration(std::int64_t it) { iteration_ = it; }
    double current_lr() const { return double(opt_.lr()); }

private:
    PretrainConfig cfg_;
    Generator<S> gen_;
    Adam<S> opt_;
    Rng mask_rng_, data_rng_;
    std::int64_t iteration_ = 0;
};

}  // namespace uvcgan
