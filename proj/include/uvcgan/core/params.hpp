#pragma once

#include <string>
#include <utility>
#include <vector>

#include "uvcgan/core/autodiff.hpp"
#include "uvcgan/core/rng.hpp"
#include "uvcgan/core/serialize.hpp"
#include "uvcgan/core/tensor.hpp"

namespace uvcgan {

// Ordered, named collection of trainable leaves. Creation order is the
// canonical order used by optimizers and checkpoints.
template <typename S>
class ParamSet {
public:
    Var<S> create(const std::string& name, Tensor<S> init) {
        for (const auto& n : names_)
            if (n == name) throw ValueError("ParamSet: duplicate parameter '" + name + "'");
        Var<S> v = Var<S>::leaf(std::move(init), true);
        names_.push_back(name);
        vars_.push_back(v);
        return v;
    }

    const std::vector<Var<S>>& vars() const { return vars_; }
    const std::vector<std::string>& names() const { return names_; }
    std::size_t count() const { return vars_.size(); }

    Var<S> get(const std::string& name) const {
        for (size_t i = 0; i < names_.size(); ++i)
            if (names_[i] == name) return vars_[i];
        throw ValueError("ParamSet: no parameter named '" + name + "'");
    }

    Index total_size() const {
        Index n = 0;
        for (const Var<S>& v : vars_) n += v.numel();
        return n;
    }

    // Bitwise fingerprint of all parameter values, in creation order.
    std::uint64_t values_hash() const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (const Var<S>& v : vars_)
            h = fnv1a64(v.value().data(), static_cast<size_t>(v.numel()) * sizeof(S), h);
        return h;
    }

    void save(TensorBundle& bundle, const std::string& prefix) const {
        for (size_t i = 0; i < vars_.size(); ++i)
            bundle.put(prefix + names_[i], vars_[i].value());
    }

    void load(const TensorBundle& bundle, const std::string& prefix) {
        for (size_t i = 0; i < vars_.size(); ++i) {
            Tensor<S> t = bundle.template get<S>(prefix + names_[i]);
            if (t.shape() != vars_[i].shape())
                throw IoError("ParamSet: shape mismatch for '" + prefix + names_[i] + "': have " +
                              vars_[i].shape().str() + ", checkpoint has " + t.shape().str());
            vars_[i].mutable_value() = std::move(t);
        }
    }

    // Overwrite values from a structurally identical set (same names/shapes).
    void copy_values_from(const ParamSet& other) {
        if (other.names_ != names_)
            throw ValueError("ParamSet: cannot copy values between different architectures");
        for (size_t i = 0; i < vars_.size(); ++i)
            vars_[i].mutable_value() = other.vars_[i].value();
    }

private:
    std::vector<std::string> names_;
    std::vector<Var<S>> vars_;
};

// Truncated-normal weight init (std `stddev`, clipped at two sigma).
template <typename S>
Tensor<S> trunc_normal_init(Shape shape, S stddev, Rng& rng) {
    Tensor<S> t(shape);
    for (Index i = 0; i < t.numel(); ++i)
        t[i] = static_cast<S>(rng.truncated_normal(static_cast<double>(stddev)));
    return t;
}

}  // namespace uvcgan
