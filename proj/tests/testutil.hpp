#pragma once

// Shared test helpers: random tensors and a finite-difference gradient
// checker. The checker rebuilds the loss from perturbed constant leaves, so
// it also validates losses that run an internal backward pass (the gradient
// penalty path).

#include <cmath>
#include <functional>
#include <vector>

#include "uvcgan/core/ops.hpp"
#include "uvcgan/core/rng.hpp"

namespace testutil {

using uvcgan::Index;
using uvcgan::Rng;
using uvcgan::Shape;
using uvcgan::Tensor;
using uvcgan::Var;

inline Tensor<double> uniform_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(shape);
    for (Index i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

inline Tensor<double> normal_tensor(Shape shape, Rng& rng, double stddev = 1.0) {
    Tensor<double> t(shape);
    for (Index i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
    return t;
}

using LossFn = std::function<Var<double>(const std::vector<Var<double>>&)>;

struct GradcheckResult {
    double max_rel_err = 0.0;
    int coords_checked = 0;
};

// Compares analytic gradients of a scalar-valued function against central
// finite differences. `max_coords_per_input` < 0 checks every coordinate.
inline GradcheckResult gradcheck(const LossFn& loss_fn, std::vector<Tensor<double>> inputs,
                                 double eps = 1e-5, int max_coords_per_input = -1,
                                 std::uint64_t seed = 1234) {
    std::vector<Var<double>> leaves;
    for (const auto& t : inputs) leaves.push_back(Var<double>::leaf(t, true));

    Var<double> loss = loss_fn(leaves);
    if (loss.numel() != 1) throw uvcgan::ValueError("gradcheck: loss must be scalar");
    uvcgan::GradMap<double> grads = uvcgan::backward(loss);

    auto eval = [&](const std::vector<Tensor<double>>& vals) {
        std::vector<Var<double>> consts;
        for (const auto& t : vals) consts.push_back(Var<double>::constant(t));
        return loss_fn(consts).value()[0];
    };

    Rng rng(seed);
    GradcheckResult result;
    for (size_t i = 0; i < inputs.size(); ++i) {
        Tensor<double> analytic = grads.tensor(leaves[i]);
        const Index n = inputs[i].numel();
        std::vector<Index> coords;
        if (max_coords_per_input < 0 || max_coords_per_input >= n) {
            for (Index j = 0; j < n; ++j) coords.push_back(j);
        } else {
            for (int j = 0; j < max_coords_per_input; ++j) coords.push_back(rng.uniform_index(n));
        }
        for (Index j : coords) {
            const double orig = inputs[i][j];
            inputs[i][j] = orig + eps;
            const double fp = eval(inputs);
            inputs[i][j] = orig - eps;
            const double fm = eval(inputs);
            inputs[i][j] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[j];
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-3});
            if (rel > result.max_rel_err) result.max_rel_err = rel;
            ++result.coords_checked;
        }
    }
    return result;
}

}  // namespace testutil
