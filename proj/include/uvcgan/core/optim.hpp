#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "uvcgan/core/autodiff.hpp"
#include "uvcgan/core/tensor.hpp"

namespace uvcgan {

template <typename S>
struct AdamConfig {
    S lr = S(1e-4);
    S beta1 = S(0.9);
    S beta2 = S(0.999);
    S eps = S(1e-8);
};

// Adam with bias correction. Moment buffers and the step counter are exposed
// so checkpoints can capture and restore the exact optimizer state.
template <typename S>
class Adam {
public:
    Adam() = default;

    Adam(std::vector<Var<S>> params, AdamConfig<S> cfg)
        : params_(std::move(params)), cfg_(cfg) {
        for (const Var<S>& p : params_) {
            m_.push_back(zeros_like(p.value()));
            v_.push_back(zeros_like(p.value()));
        }
    }

    S lr() const { return cfg_.lr; }
    void set_lr(S lr) { cfg_.lr = lr; }
    const AdamConfig<S>& config() const { return cfg_; }

    const std::vector<Var<S>>& params() const { return params_; }

    void step(const GradMap<S>& grads) {
        ++t_;
        const S bc1 = S(1) - std::pow(cfg_.beta1, S(t_));
        const S bc2 = S(1) - std::pow(cfg_.beta2, S(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            Tensor<S> g = grads.tensor(params_[i]);
            if (g.shape() != params_[i].shape())
                throw ShapeError("Adam::step: gradient shape mismatch");
            auto gm = g.array();
            m_[i].array() = cfg_.beta1 * m_[i].array() + (S(1) - cfg_.beta1) * gm;
            v_[i].array() = cfg_.beta2 * v_[i].array() + (S(1) - cfg_.beta2) * gm.square();
            auto mh = m_[i].array() / bc1;
            auto vh = v_[i].array() / bc2;
            params_[i].mutable_value().array() -= cfg_.lr * mh / (vh.sqrt() + cfg_.eps);
        }
    }

    std::int64_t step_count() const { return t_; }
    void set_step_count(std::int64_t t) { t_ = t; }

    std::vector<Tensor<S>>& first_moments() { return m_; }
    std::vector<Tensor<S>>& second_moments() { return v_; }
    const std::vector<Tensor<S>>& first_moments() const { return m_; }
    const std::vector<Tensor<S>>& second_moments() const { return v_; }

private:
    std::vector<Var<S>> params_;
    AdamConfig<S> cfg_;
    std::vector<Tensor<S>> m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace uvcgan
