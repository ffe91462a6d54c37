#pragma once

// Training objectives: least-squares adversarial terms, l1 cycle/identity
// terms, the gradient penalty that pulls the discriminator's input-gradient
// norm toward gamma, and the weighted totals.
//
// Everything returns a scalar Var wired into the autodiff graph; the penalty
// differentiates through its own backward pass, so optimizing it needs
// second-order support (which the op set provides).

#include <cmath>
#include <functional>
#include <limits>
#include <utility>

#include "uvcgan/core/error.hpp"
#include "uvcgan/core/ops.hpp"

namespace uvcgan {

struct LossWeights {
    double lambda_cyc = 10.0;
    double lambda_idt = 5.0;
    double lambda_gp = 0.1;
    double gamma = 100.0;

    void validate() const {
        if (lambda_cyc < 0 || lambda_idt < 0 || lambda_gp < 0)
            throw ConfigError("loss weights must be non-negative");
        if (lambda_gp > 0 && gamma <= 0)
            throw ConfigError("gradient penalty needs gamma > 0 when lambda_gp > 0");
    }

    bool operator==(const LossWeights&) const = default;
};

namespace detail {

template <typename S>
void check_scores(const Var<S>& scores, const char* who) {
    if (!scores.defined() || scores.numel() == 0)
        throw ValueError(std::string(who) + ": empty score tensor");
    if (!scores.value().all_finite())
        throw NumericError(std::string(who) + ": scores contain NaN or Inf");
}

template <typename S>
S scalar_of(const Var<S>& v, const char* who) {
    if (!v.defined() || v.numel() != 1)
        throw ValueError(std::string(who) + ": expected a scalar component");
    return v.value()[0];
}

}  // namespace detail

// mean((score - 1)^2): the generator wants every patch judged real.
template <typename S>
Var<S> lsgan_gen_adv(const Var<S>& fake_scores) {
    detail::check_scores(fake_scores, "lsgan_gen_adv");
    return mean_all(square(add_scalar(fake_scores, S(-1))));
}

// 0.5*mean((real - 1)^2) + 0.5*mean(fake^2).
template <typename S>
Var<S> lsgan_disc_adv(const Var<S>& real_scores, const Var<S>& fake_scores) {
    detail::check_scores(real_scores, "lsgan_disc_adv");
    detail::check_scores(fake_scores, "lsgan_disc_adv");
    Var<S> real_term = mean_all(square(add_scalar(real_scores, S(-1))));
    Var<S> fake_term = mean_all(square(fake_scores));
    return mul_scalar(add(real_term, fake_term), S(0.5));
}

template <typename S>
Var<S> cycle_loss(const Var<S>& x, const Var<S>& x_reconstructed) {
    return l1_loss(x_reconstructed, x);
}

template <typename S>
Var<S> identity_loss(const Var<S>& x, const Var<S>& x_identity) {
    return l1_loss(x_identity, x);
}

// mean over the batch of ((||d(sum D(x))/dx||_2 - gamma) / gamma)^2.  The
// norm is guarded with the smallest positive double so a exactly-zero
// gradient field stays differentiable instead of producing NaN.
template <typename S>
Var<S> gradient_penalty(const std::function<Var<S>(const Var<S>&)>& disc, const Var<S>& x,
                        S gamma) {
    if (!(gamma > 0)) throw ValueError("gradient_penalty: gamma must be positive");
    if (!x.defined()) throw ValueError("gradient_penalty: undefined input");

    Var<S> probe = x.detach();
    probe.set_requires_grad(true);
    Var<S> scores = disc(probe);
    GradMap<S> grads = backward(sum_all(scores), /*create_graph=*/true);

    // A discriminator that ignores its input has an identically-zero input
    // gradient; the penalty is then ((0 - gamma)/gamma)^2 = 1.
    Var<S> grad_x = grads.contains(probe)
                        ? grads.at(probe)
                        : Var<S>::constant(Tensor<S>::zeros(probe.shape()));
    Var<S> sq_norm = sum_per_sample(square(grad_x));
    Var<S> norm = sqrt(add_scalar(sq_norm, std::numeric_limits<S>::min()));
    Var<S> off_target = mul_scalar(add_scalar(norm, -gamma), S(1) / gamma);
    return mean_all(square(off_target));
}

// adv + lambda_idt * idt + lambda_cyc * cyc
template <typename S>
Var<S> generator_total(const Var<S>& adv, const Var<S>& idt, const Var<S>& cyc,
                       const LossWeights& w) {
    w.validate();
    for (auto [v, who] : {std::pair{&adv, "generator_total: adv"},
                          std::pair{&idt, "generator_total: idt"},
                          std::pair{&cyc, "generator_total: cyc"}})
        if (!std::isfinite(double(detail::scalar_of(*v, who))))
            throw NumericError(std::string(who) + " is not finite");
    return add(adv, add(mul_scalar(idt, S(w.lambda_idt)), mul_scalar(cyc, S(w.lambda_cyc))));
}

// adv + lambda_gp * gp; gp may be undefined when lambda_gp == 0.
template <typename S>
Var<S> discriminator_total(const Var<S>& adv, const Var<S>& gp, const LossWeights& w) {
    w.validate();
    if (!std::isfinite(double(detail::scalar_of(adv, "discriminator_total: adv"))))
        throw NumericError("discriminator_total: adv is not finite");
    if (w.lambda_gp == 0 && !gp.defined()) return adv;
    if (!std::isfinite(double(detail::scalar_of(gp, "discriminator_total: gp"))))
        throw NumericError("discriminator_total: gp is not finite");
    return add(adv, mul_scalar(gp, S(w.lambda_gp)));
}

}  // namespace uvcgan
