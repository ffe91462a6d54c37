#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "testutil.hpp"
#include "uvcgan/discriminator.hpp"

using namespace uvcgan;
using namespace testutil;

namespace {

DiscriminatorConfig small_config() {
    DiscriminatorConfig c;
    c.base_channels = 4;
    c.n_layers = 2;
    return c;
}

long long conv_n(long long cin, long long cout, long long k) { return cin * cout * k * k + cout; }

// Layer tally done independently of the builder.
long long expected_param_count(const DiscriminatorConfig& c) {
    auto width = [&](long long i) {
        return c.base_channels * std::min<long long>(1LL << i, 8);
    };
    long long total = conv_n(c.in_channels, width(0), 4);
    long long cin = width(0);
    for (long long i = 1; i <= c.n_layers; ++i) {
        total += conv_n(cin, width(i), 4) + 2 * width(i);
        cin = width(i);
    }
    return total + conv_n(cin, 1, 4);
}

template <typename S>
Tensor<S> image(Index b, Index c, Index h, Index w, Rng& rng) {
    Tensor<S> t(Shape{b, c, h, w});
    for (Index i = 0; i < t.numel(); ++i) t[i] = S(rng.uniform());
    return t;
}

}  // namespace

TEST_CASE("config validation") {
    CHECK_NOTHROW(DiscriminatorConfig{}.validate());
    DiscriminatorConfig c;
    c.base_channels = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = DiscriminatorConfig{};
    c.n_layers = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = DiscriminatorConfig{};
    c.leaky_slope = -0.1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("parameter count matches the closed-form tally") {
    CHECK(expected_param_count(DiscriminatorConfig{}) == 2766529LL);
    Discriminator<float> d(DiscriminatorConfig{}, 5);
    CHECK(static_cast<long long>(d.params().total_size()) == 2766529LL);

    Discriminator<float> s(small_config(), 5);
    CHECK(static_cast<long long>(s.params().total_size()) ==
          expected_param_count(small_config()));
}

TEST_CASE("score map shapes") {
    Discriminator<float> d(DiscriminatorConfig{}, 1);
    Rng rng(2);

    Var<float> big = d.forward(Var<float>::constant(image<float>(1, 3, 256, 256, rng)));
    CHECK(big.shape() == Shape{1, 1, 30, 30});
    CHECK(big.value().all_finite());

    // A 70x70 window (one receptive field) still produces a valid score grid.
    Var<float> rf = d.forward(Var<float>::constant(image<float>(2, 3, 70, 70, rng)));
    CHECK(rf.shape() == Shape{2, 1, 6, 6});

    CHECK(d.min_input_size() == 24);
    Var<float> lo = d.forward(Var<float>::constant(image<float>(1, 3, 24, 24, rng)));
    CHECK(lo.shape() == Shape{1, 1, 1, 1});
    CHECK_THROWS_AS(d.forward(Var<float>::constant(image<float>(1, 3, 23, 23, rng))),
                    ShapeError);
}

TEST_CASE("input validation") {
    Discriminator<float> d(small_config(), 3);
    Rng rng(4);

    CHECK_THROWS_AS(d.forward(Var<float>::constant(Tensor<float>::zeros(Shape{3, 64, 64}))),
                    ShapeError);
    CHECK_THROWS_AS(d.forward(Var<float>::constant(image<float>(1, 4, 64, 64, rng))),
                    ShapeError);

    Tensor<float> with_nan = image<float>(1, 3, 64, 64, rng);
    with_nan[0] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(d.forward(Var<float>::constant(with_nan)), ValueError);
}

TEST_CASE("init is deterministic in the seed") {
    Discriminator<float> a(DiscriminatorConfig{}, 9), b(DiscriminatorConfig{}, 9),
        c(DiscriminatorConfig{}, 10);
    CHECK(a.params().values_hash() == b.params().values_hash());
    CHECK(a.params().values_hash() != c.params().values_hash());

    Rng rng(11);
    Tensor<float> x = image<float>(1, 3, 32, 32, rng);
    CHECK(a.forward(Var<float>::constant(x)).value().same_bits(
        b.forward(Var<float>::constant(x)).value()));
}

TEST_CASE("analytic gradients match finite differences") {
    Discriminator<double> d(small_config(), 21);
    Rng rng(33);
    Var<double> x = Var<double>::leaf(image<double>(1, 3, 16, 16, rng), true);

    auto probe_shape = d.forward(x).shape();
    Tensor<double> weight = normal_tensor(probe_shape, rng);
    auto loss_of = [&]() { return sum_all(mul(d.forward(x), Var<double>::constant(weight))); };

    GradMap<double> grads = backward(loss_of());
    std::vector<Var<double>> leaves = d.params().vars();
    leaves.push_back(x);

    Rng pick(77);
    const double eps = 1e-5;
    double max_rel = 0;
    int checked = 0;
    for (Var<double>& leaf : leaves) {
        Tensor<double> g = grads.tensor(leaf);
        const Index coords = std::min<Index>(leaf.numel(), 4);
        for (Index c = 0; c < coords; ++c) {
            const Index idx = Index(pick.uniform_index(std::uint64_t(leaf.numel())));
            const double saved = leaf.value()[idx];
            double plus, minus;
            {
                NoGradGuard no_grad;
                leaf.mutable_value()[idx] = saved + eps;
                plus = loss_of().value()[0];
                leaf.mutable_value()[idx] = saved - eps;
                minus = loss_of().value()[0];
                leaf.mutable_value()[idx] = saved;
            }
            const double numeric = (plus - minus) / (2 * eps);
            const double rel = std::abs(g[idx] - numeric) /
                               std::max({std::abs(g[idx]), std::abs(numeric), 1e-3});
            max_rel = std::max(max_rel, rel);
            ++checked;
        }
    }
    CHECK(checked >= 40);
    CHECK(max_rel < 1e-4);
    MESSAGE("discriminator gradcheck: ", checked, " coords, max rel err ", max_rel);
}
