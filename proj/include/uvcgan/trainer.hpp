#pragma once

// Cycle-consistent adversarial training: two generators (A->B and B->A), two
// patch discriminators, image-history pools, and the per-iteration phase pair
// "update discriminators, then update generators".

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "uvcgan/core/optim.hpp"
#include "uvcgan/core/serialize.hpp"
#include "uvcgan/discriminator.hpp"
#include "uvcgan/generator.hpp"
#include "uvcgan/losses.hpp"

namespace uvcgan {

// Constant for the first half of training, then linearly annealed to zero.
inline double lr_schedule(std::int64_t step, std::int64_t total, double lr_max) {
    if (total <= 0) throw ValueError("lr_schedule: total must be positive");
    if (step < 0 || step > total) throw ValueError("lr_schedule: step outside [0, total]");
    const double half = double(total) / 2.0;
    if (double(step) < half) return lr_max;
    return lr_max * (1.0 - (double(step) - half) / half);
}

// History buffer of past translations.  Below capacity every sample is stored
// and returned as-is; at capacity a coin flip either returns the fresh sample
// untouched or swaps it with a uniformly chosen stored one and returns the
// stored image.  Draw order: the coin first, the slot index only on a swap.
template <typename S>
class ImagePool {
public:
    ImagePool() = default;
    explicit ImagePool(std::size_t capacity) : capacity_(capacity) {}

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return items_.size(); }

    Tensor<S> sample(const Tensor<S>& fresh, Rng& rng) {
        if (capacity_ == 0) return fresh;
        if (items_.size() < capacity_) {
            items_.push_back(fresh);
            return fresh;
        }
        if (rng.bernoulli(0.5)) return fresh;
        const std::size_t slot = std::size_t(rng.uniform_index(items_.size()));
        Tensor<S> stored = std::move(items_[slot]);
        items_[slot] = fresh;
        return stored;
    }

    void save(TensorBundle& b, const std::string& prefix) const {
        b.put<S>(prefix + "capacity",
                 Tensor<S>::scalar(S(double(capacity_))));
        b.put<S>(prefix + "count", Tensor<S>::scalar(S(double(items_.size()))));
        for (std::size_t i = 0; i < items_.size(); ++i)
            b.put<S>(prefix + "item" + std::to_string(i), items_[i]);
    }

    void load(const TensorBundle& b, const std::string& prefix) {
        capacity_ = std::size_t(double(b.get<S>(prefix + "capacity")[0]));
        const std::size_t n = std::size_t(double(b.get<S>(prefix + "count")[0]));
        items_.clear();
        for (std::size_t i = 0; i < n; ++i)
            items_.push_back(b.get<S>(prefix + "item" + std::to_string(i)));
    }

private:
    std::size_t capacity_ = 0;
    std::vector<Tensor<S>> items_;
};

struct TrainConfig {
    std::int64_t total_iters = 1'000'000;
    double lr = 1e-4;
    Index batch_size = 1;
    LossWeights weights;
    bool use_identity = true;
    bool use_gp = true;
    std::string pretrained_init;  // checkpoint path; empty = random init
    Index pool_size = 50;
    std::uint64_t seed = 0;

    void validate() const {
        if (total_iters <= 0) throw ConfigError("train: total_iters must be positive");
        if (lr <= 0) throw ConfigError("train: lr must be positive");
        if (batch_size <= 0) throw ConfigError("train: batch_size must be positive");
        if (pool_size < 0) throw ConfigError("train: pool_size must be non-negative");
        weights.validate();
    }

    bool operator==(const TrainConfig&) const = default;
};

template <typename S>
struct TranslatePass {
    Tensor<S> b_t, a_t;      // translations
    Tensor<S> a_cyc, b_cyc;  // round trips
    Tensor<S> a_idt, b_idt;  // same-domain passes
};

struct IterationMetrics {
    double lr = 0;
    double disc_a = 0, disc_b = 0;  // adversarial terms
    double gp_a = 0, gp_b = 0;      // raw penalties, 0 when disabled
    double disc_total = 0;
    double adv_ab = 0, adv_ba = 0;  // per-direction generator components
    double cyc_a = 0, cyc_b = 0;
    double idt_a = 0, idt_b = 0;
    double gen_total = 0;
};

template <typename S>
class Trainer {
public:
    Trainer(const GeneratorConfig& gcfg, const DiscriminatorConfig& dcfg, const TrainConfig& cfg)
        : gcfg_(gcfg),
          dcfg_(dcfg),
          cfg_(cfg),
          gen_ab_(gcfg, Rng::stream(cfg.seed, "init.gen_ab").next()),
          gen_ba_(gcfg, Rng::stream(cfg.seed, "init.gen_ba").next()),
          disc_a_(dcfg, Rng::stream(cfg.seed, "init.disc_a").next()),
          disc_b_(dcfg, Rng::stream(cfg.seed, "init.disc_b").next()),
          opt_gen_ab_(gen_ab_.params().vars(), gan_adam(cfg.lr)),
          opt_gen_ba_(gen_ba_.params().vars(), gan_adam(cfg.lr)),
          opt_disc_a_(disc_a_.params().vars(), gan_adam(cfg.lr)),
          opt_disc_b_(disc_b_.params().vars(), gan_adam(cfg.lr)),
          pool_a_(std::size_t(cfg.pool_size)),
          pool_b_(std::size_t(cfg.pool_size)),
          pool_rng_(Rng::stream(cfg.seed, "pool")),
          data_rng_(Rng::stream(cfg.seed, "data")) {
        cfg_.validate();
        eff_weights_ = cfg.weights;
        if (!cfg.use_identity) eff_weights_.lambda_idt = 0;
        if (!cfg.use_gp) eff_weights_.lambda_gp = 0;
    }

    // Overwrites both generators with one pretrained parameter set.
    void init_from_pretrained(const Generator<S>& pretrained) {
        if (pretrained.config() != gcfg_)
            throw IoError("pretrained generator was built with a different architecture config");
        gen_ab_.params().copy_values_from(pretrained.params());
        gen_ba_.params().copy_values_from(pretrained.params());
    }

    // Inference-only translations of one unpaired batch: the two
    // cross-domain maps, their round trips, and the same-domain passes.
    TranslatePass<S> translate_pass(const Tensor<S>& a, const Tensor<S>& b) const {
        NoGradGuard frozen;
        TranslatePass<S> out;
        Var<S> va = Var<S>::constant(a), vb = Var<S>::constant(b);
        Var<S> b_t = gen_ab_(va), a_t = gen_ba_(vb);
        out.b_t = b_t.value();
        out.a_t = a_t.value();
        out.a_cyc = gen_ba_(b_t).value();
        out.b_cyc = gen_ab_(a_t).value();
        out.a_idt = gen_ba_(va).value();
        out.b_idt = gen_ab_(vb).value();
        return out;
    }

    // Discriminator phase: update both critics on real images and pooled
    // fakes.  Generator parameters are untouched (the fakes arrive as plain
    // tensors, already cut from the generator graph).
    IterationMetrics disc_step(const Tensor<S>& a, const Tensor<S>& b, const Tensor<S>& b_t,
                               const Tensor<S>& a_t) {
        IterationMetrics m;
        m.lr = double(opt_disc_a_.lr());

        Tensor<S> fake_a = pool_a_.sample(a_t, pool_rng_);
        Tensor<S> fake_b = pool_b_.sample(b_t, pool_rng_);

        auto domain_loss = [&](Discriminator<S>& disc, const Tensor<S>& real,
                               const Tensor<S>& fake, double& adv_out, double& gp_out) {
            Var<S> real_v = Var<S>::constant(real), fake_v = Var<S>::constant(fake);
            Var<S> adv = lsgan_disc_adv(disc(real_v), disc(fake_v));
            Var<S> gp;
            if (cfg_.use_gp) {
                std::function<Var<S>(const Var<S>&)> critic = [&disc](const Var<S>& z) {
                    return disc(z);
                };
                const S gamma = S(cfg_.weights.gamma);
                gp = mul_scalar(add(gradient_penalty(critic, real_v, gamma),
                                    gradient_penalty(critic, fake_v, gamma)),
                                S(0.5));
                gp_out = double(gp.value()[0]);
            }
            adv_out = double(adv.value()[0]);
            return discriminator_total(adv, gp, eff_weights_);
        };

        Var<S> loss_a = domain_loss(disc_a_, a, fake_a, m.disc_a, m.gp_a);
        Var<S> loss_b = domain_loss(disc_b_, b, fake_b, m.disc_b, m.gp_b);
        m.disc_total = double(loss_a.value()[0]) + double(loss_b.value()[0]);

        GradMap<S> grads_a = backward(loss_a);
        GradMap<S> grads_b = backward(loss_b);
        opt_disc_a_.step(grads_a);
        opt_disc_b_.step(grads_b);
        return m;
    }

    // Generator phase: one combined objective over both directions, one
    // backward pass, updates to both generators only.
    IterationMetrics gen_step(const Tensor<S>& a, const Tensor<S>& b) {
        IterationMetrics m;
        m.lr = double(opt_gen_ab_.lr());

        Var<S> va = Var<S>::constant(a), vb = Var<S>::constant(b);
        Var<S> b_t = gen_ab_(va), a_t = gen_ba_(vb);
        Var<S> a_cyc = gen_ba_(b_t), b_cyc = gen_ab_(a_t);

        Var<S> adv_ab = lsgan_gen_adv(disc_b_(b_t));
        Var<S> adv_ba = lsgan_gen_adv(disc_a_(a_t));
        Var<S> cyc_a = cycle_loss(va, a_cyc), cyc_b = cycle_loss(vb, b_cyc);

        Var<S> adv = mul_scalar(add(adv_ab, adv_ba), S(0.5));
        Var<S> cyc = mul_scalar(add(cyc_a, cyc_b), S(0.5));
        Var<S> idt = Var<S>::constant(Tensor<S>::scalar(S(0)));
        if (cfg_.use_identity) {
            Var<S> idt_a = identity_loss(va, gen_ba_(va));
            Var<S> idt_b = identity_loss(vb, gen_ab_(vb));
            m.idt_a = double(idt_a.value()[0]);
            m.idt_b = double(idt_b.value()[0]);
            idt = mul_scalar(add(idt_a, idt_b), S(0.5));
        }

        Var<S> total = generator_total(adv, idt, cyc, eff_weights_);
        m.adv_ab = double(adv_ab.value()[0]);
        m.adv_ba = double(adv_ba.value()[0]);
        m.cyc_a = double(cyc_a.value()[0]);
        m.cyc_b = double(cyc_b.value()[0]);
        m.gen_total = double(total.value()[0]);

        GradMap<S> grads = backward(total);
        opt_gen_ab_.step(grads);
        opt_gen_ba_.step(grads);
        return m;
    }

    // One full iteration: schedule the LR, refresh translations, then the
    // discriminator phase followed by the generator phase.
    IterationMetrics train_iteration(const Tensor<S>& a, const Tensor<S>& b) {
        if (iteration_ >= cfg_.total_iters)
            throw ValueError("train: schedule exhausted after " +
                             std::to_string(cfg_.total_iters) + " iterations");
        const double lr = lr_schedule(iteration_, cfg_.total_iters, cfg_.lr);
        for (Adam<S>* opt : {&opt_gen_ab_, &opt_gen_ba_, &opt_disc_a_, &opt_disc_b_})
            opt->set_lr(S(lr));

        TranslatePass<S> tp = translate_pass(a, b);
        IterationMetrics m = disc_step(a, b, tp.b_t, tp.a_t);
        IterationMetrics g = gen_step(a, b);

        m.adv_ab = g.adv_ab;
        m.adv_ba = g.adv_ba;
        m.cyc_a = g.cyc_a;
        m.cyc_b = g.cyc_b;
        m.idt_a = g.idt_a;
        m.idt_b = g.idt_b;
        m.gen_total = g.gen_total;
        m.lr = lr;
        ++iteration_;
        return m;
    }

    const GeneratorConfig& gen_config() const { return gcfg_; }
    const DiscriminatorConfig& disc_config() const { return dcfg_; }
    const TrainConfig& config() const { return cfg_; }
    const LossWeights& effective_weights() const { return eff_weights_; }

    Generator<S>& gen_ab() { return gen_ab_; }
    Generator<S>& gen_ba() { return gen_ba_; }
    Discriminator<S>& disc_a() { return disc_a_; }
    Discriminator<S>& disc_b() { return disc_b_; }
    const Generator<S>& gen_ab() const { return gen_ab_; }
    const Generator<S>& gen_ba() const { return gen_ba_; }
    const Discriminator<S>& disc_a() const { return disc_a_; }
    const Discriminator<S>& disc_b() const { return disc_b_; }

    Adam<S>& opt_gen_ab() { return opt_gen_ab_; }
    Adam<S>& opt_gen_ba() { return opt_gen_ba_; }
    Adam<S>& opt_disc_a() { return opt_disc_a_; }
    Adam<S>& opt_disc_b() { return opt_disc_b_; }
    const Adam<S>& opt_gen_ab() const { return opt_gen_ab_; }
    const Adam<S>& opt_gen_ba() const { return opt_gen_ba_; }
    const Adam<S>& opt_disc_a() const { return opt_disc_a_; }
    const Adam<S>& opt_disc_b() const { return opt_disc_b_; }

    ImagePool<S>& pool_a() { return pool_a_; }
    ImagePool<S>& pool_b() { return pool_b_; }
    const ImagePool<S>& pool_a() const { return pool_a_; }
    const ImagePool<S>& pool_b() const { return pool_b_; }

    Rng& pool_rng() { return pool_rng_; }
    Rng& data_rng() { return data_rng_; }
    const Rng& pool_rng() const { return pool_rng_; }
    const Rng& data_rng() const { return data_rng_; }

    std::int64_t iteration() const { return iteration_; }
    void set_iteration(std::int64_t it) { iteration_ = it; }

private:
    static AdamConfig<S> gan_adam(double lr) {
        return AdamConfig<S>{S(lr), S(0.5), S(0.999), S(1e-8)};
    }

    GeneratorConfig gcfg_;
    DiscriminatorConfig dcfg_;
    TrainConfig cfg_;
    LossWeights eff_weights_;
    Generator<S> gen_ab_, gen_ba_;
    Discriminator<S> disc_a_, disc_b_;
    Adam<S> opt_gen_ab_, opt_gen_ba_, opt_disc_a_, opt_disc_b_;
    ImagePool<S> pool_a_, pool_b_;
    Rng pool_rng_, data_rng_;
    std::int64_t iteration_ = 0;
};

}  // namespace uvcgan
