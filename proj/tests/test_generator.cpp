#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "testutil.hpp"
#include "uvcgan/generator.hpp"

using namespace uvcgan;
using namespace testutil;

namespace {

GeneratorConfig default_config() { return GeneratorConfig{}; }

// Reduced widths for fast tests; same topology as the default.
GeneratorConfig desk_config() {
    GeneratorConfig c;
    c.base_features = 12;
    c.token_features = 96;
    c.pe_features = 96;
    c.vit_features = 96;
    c.ffn_features = 384;
    c.vit_blocks = 4;
    c.heads = 6;
    return c;
}

GeneratorConfig tiny_config() {
    GeneratorConfig c;
    c.in_channels = 2;
    c.base_features = 6;
    c.levels = 2;
    c.token_features = 12;
    c.pe_features = 8;
    c.vit_features = 8;
    c.ffn_features = 16;
    c.vit_blocks = 2;
    c.heads = 2;
    return c;
}

// Parameter count from the layer formulas alone, independent of construction.
long long conv_n(long long cin, long long cout, long long k) { return cin * cout * k * k + cout; }
long long lin_n(long long fin, long long fout) { return fin * fout + fout; }
long long norm_n(long long c) { return 2 * c; }
long long block_n(long long cin, long long cout) {
    return norm_n(cin) + conv_n(cin, cout, 3) + norm_n(cout) + conv_n(cout, cout, 3);
}

long long expected_param_count(const GeneratorConfig& c) {
    const long long f0 = c.base_features, levels = c.levels, f = c.token_features;
    auto enc_in = [&](long long i) { return i == 0 ? f0 : f0 << (i - 1); };
    auto enc_out = [&](long long i) { return i == 0 ? f0 : f0 << i; };
    auto dec_out = [&](long long i) { return i == levels - 1 ? f : f0 << i; };
    auto dec_below = [&](long long i) { return i == levels - 1 ? f : dec_out(i + 1); };

    long long total = conv_n(c.in_channels, f0, 3);
    for (long long i = 0; i < levels; ++i)
        total += block_n(enc_in(i), enc_out(i)) + conv_n(enc_out(i), enc_out(i), 2);

    total += lin_n(2, c.pe_features);
    total += lin_n(f + c.pe_features, c.vit_features);
    const long long per_block = 2 * norm_n(c.vit_features) + 4 * lin_n(c.vit_features, c.vit_features) +
                                lin_n(c.vit_features, c.ffn_features) +
                                lin_n(c.ffn_features, c.vit_features) + 1;
    total += c.vit_blocks * per_block;
    total += lin_n(c.vit_features, f);

    for (long long i = 0; i < levels; ++i)
        total += conv_n(dec_below(i), dec_below(i) / 2, 3) +
                 block_n(dec_below(i) / 2 + enc_out(i), dec_out(i));

    total += conv_n(dec_out(0), c.in_channels, 1);
    return total;
}

template <typename S>
Tensor<S> image(Index b, Index c, Index h, Index w, Rng& rng) {
    Tensor<S> t(Shape{b, c, h, w});
    for (Index i = 0; i < t.numel(); ++i) t[i] = S(rng.uniform());
    return t;
}

}  // namespace

TEST_CASE("config validation") {
    CHECK_NOTHROW(default_config().validate());
    CHECK_NOTHROW(desk_config().validate());
    CHECK_NOTHROW(tiny_config().validate());

    GeneratorConfig c = default_config();
    c.token_features = 256;  // != 48 * 2^3
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = default_config();
    c.heads = 5;  // 384 % 5 != 0
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = default_config();
    c.levels = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = default_config();
    c.ffn_features = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = default_config();
    c.leaky_slope = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);

    CHECK(default_config().spatial_divisor() == 16);
    CHECK(tiny_config().spatial_divisor() == 4);

    CHECK_THROWS_AS(Generator<float>(c, 1), ConfigError);
}

TEST_CASE("parameter count matches the closed-form tally") {
    // Frozen tally for the default architecture, derived once by summing the
    // layer formulas by hand.
    CHECK(expected_param_count(default_config()) == 31345791LL);

    Generator<float> gen(default_config(), 7);
    CHECK(static_cast<long long>(gen.params().total_size()) == 31345791LL);

    Generator<float> desk(desk_config(), 7);
    CHECK(static_cast<long long>(desk.params().total_size()) ==
          expected_param_count(desk_config()));

    Generator<double> tiny(tiny_config(), 7);
    CHECK(static_cast<long long>(tiny.params().total_size()) ==
          expected_param_count(tiny_config()));
}

TEST_CASE("init is deterministic in the seed") {
    Generator<float> a(desk_config(), 42), b(desk_config(), 42), c(desk_config(), 43);
    CHECK(a.params().values_hash() == b.params().values_hash());
    CHECK(a.params().values_hash() != c.params().values_hash());

    Rng rng(5);
    Tensor<float> x = image<float>(1, 3, 64, 64, rng);
    CHECK(a.forward(Var<float>::constant(x)).value().same_bits(
        b.forward(Var<float>::constant(x)).value()));
}

TEST_CASE("residual gates start at zero") {
    Generator<float> gen(desk_config(), 3);
    int n_alpha = 0;
    const auto& names = gen.params().names();
    const auto& vars = gen.params().vars();
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i].size() >= 6 && names[i].substr(names[i].size() - 6) == ".alpha") {
            ++n_alpha;
            CHECK(vars[i].numel() == 1);
            CHECK(vars[i].value()[0] == 0.0f);
        }
    }
    CHECK(n_alpha == desk_config().vit_blocks);

    CHECK(gen.params().get("pre.w").shape() == Shape{12, 3, 3, 3});
    CHECK_THROWS_AS(gen.params().get("nope"), ValueError);
}

TEST_CASE("transformer stack is the identity at init") {
    Generator<double> gen(tiny_config(), 11);
    Rng rng(8);
    Tensor<double> t = normal_tensor(Shape{2, 5, 8}, rng);
    Var<double> out = gen.transformer_stack(Var<double>::constant(t));
    CHECK(out.value().same_bits(t));

    // Once a gate is nonzero the stack must stop being the identity.
    gen.params().get("vit.blk0.alpha").mutable_value()[0] = 0.5;
    Var<double> out2 = gen.transformer_stack(Var<double>::constant(t));
    CHECK(!out2.value().same_bits(t));

    Tensor<double> bad = normal_tensor(Shape{2, 5, 9}, rng);
    CHECK_THROWS_AS(gen.transformer_stack(Var<double>::constant(bad)), ShapeError);
}

TEST_CASE("position embedding: shape, range, determinism") {
    Generator<double> gen(tiny_config(), 21);
    Var<double> pe = gen.fourier_position_embedding(4, 3);
    CHECK(pe.shape() == Shape{12, 8});
    for (Index i = 0; i < pe.numel(); ++i) {
        CHECK(pe.value()[i] >= -1.0);
        CHECK(pe.value()[i] <= 1.0);
    }

    // Distinct grid cells get distinct embeddings (random projection).
    for (Index r = 0; r < 12; ++r)
        for (Index s = r + 1; s < 12; ++s) {
            bool same = true;
            for (Index k = 0; k < 8; ++k)
                same = same && pe.value()[r * 8 + k] == pe.value()[s * 8 + k];
            CHECK(!same);
        }

    CHECK(pe.value().same_bits(gen.fourier_position_embedding(4, 3).value()));

    // sin(0 + 0) == 0 once the projection is zeroed.
    gen.params().get("vit.pe.w").mutable_value().array().setZero();
    gen.params().get("vit.pe.b").mutable_value().array().setZero();
    Var<double> zero_pe = gen.fourier_position_embedding(4, 3);
    for (Index i = 0; i < zero_pe.numel(); ++i) CHECK(zero_pe.value()[i] == 0.0);

    CHECK_THROWS_AS(gen.fourier_position_embedding(0, 3), ShapeError);
}

TEST_CASE("encode produces the documented pyramid") {
    Generator<float> gen(default_config(), 9);
    Rng rng(2);
    Var<float> x = Var<float>::constant(image<float>(1, 3, 64, 64, rng));
    auto [bottom, skips] = gen.encode(x);
    CHECK(bottom.shape() == Shape{1, 384, 4, 4});
    REQUIRE(skips.size() == 4);
    CHECK(skips[0].shape() == Shape{1, 48, 64, 64});
    CHECK(skips[1].shape() == Shape{1, 96, 32, 32});
    CHECK(skips[2].shape() == Shape{1, 192, 16, 16});
    CHECK(skips[3].shape() == Shape{1, 384, 8, 8});

    Var<float> vit = gen.vit_bottleneck(bottom);
    CHECK(vit.shape() == bottom.shape());
    CHECK(vit.value().all_finite());

    Var<float> y = gen.decode(vit, skips);
    CHECK(y.shape() == x.shape());
}

TEST_CASE("forward preserves shape and lands in (0,1)") {
    Rng rng(14);
    Generator<float> desk(desk_config(), 31);

    struct Case {
        Index b, size;
    };
    for (Case k : {Case{1, 64}, Case{2, 64}, Case{1, 128}}) {
        Var<float> x = Var<float>::constant(image<float>(k.b, 3, k.size, k.size, rng));
        Var<float> y = desk.forward(x);
        CHECK(y.shape() == x.shape());
        bool in_range = true;
        for (Index i = 0; i < y.numel(); ++i)
            in_range = in_range && y.value()[i] > 0.0f && y.value()[i] < 1.0f;
        CHECK(in_range);
    }

    Generator<float> full(default_config(), 31);
    Var<float> x = Var<float>::constant(image<float>(1, 3, 64, 64, rng));
    Var<float> y = full.forward(x);
    CHECK(y.shape() == Shape{1, 3, 64, 64});
    CHECK(y.value().all_finite());
}

TEST_CASE("input validation") {
    Generator<float> gen(desk_config(), 4);
    Rng rng(6);

    CHECK_THROWS_AS(gen.forward(Var<float>::constant(image<float>(1, 3, 250, 250, rng))),
                    ShapeError);
    CHECK_THROWS_AS(gen.forward(Var<float>::constant(image<float>(1, 1, 64, 64, rng))),
                    ShapeError);
    CHECK_THROWS_AS(gen.forward(Var<float>::constant(Tensor<float>::zeros(Shape{3, 64, 64}))),
                    ShapeError);

    Tensor<float> with_nan = image<float>(1, 3, 64, 64, rng);
    with_nan[10] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(gen.forward(Var<float>::constant(with_nan)), ValueError);

    Generator<float> tiny(tiny_config(), 4);
    std::vector<Var<float>> short_skips;
    CHECK_THROWS_AS(tiny.decode(Var<float>::constant(Tensor<float>::zeros(Shape{1, 12, 2, 2})),
                                short_skips),
                    ShapeError);
}

TEST_CASE("samples in a batch do not interact") {
    Generator<double> gen(tiny_config(), 17);
    Rng rng(23);
    Tensor<double> pair = image<double>(2, 2, 8, 8, rng);
    const Index n = 2 * 8 * 8;

    Tensor<double> first(Shape{1, 2, 8, 8}), second(Shape{1, 2, 8, 8});
    for (Index i = 0; i < n; ++i) {
        first[i] = pair[i];
        second[i] = pair[n + i];
    }

    Tensor<double> joint = gen.forward(Var<double>::constant(pair)).value();
    Tensor<double> y0 = gen.forward(Var<double>::constant(first)).value();
    Tensor<double> y1 = gen.forward(Var<double>::constant(second)).value();

    double max_diff = 0;
    for (Index i = 0; i < n; ++i) {
        max_diff = std::max(max_diff, std::abs(joint[i] - y0[i]));
        max_diff = std::max(max_diff, std::abs(joint[n + i] - y1[i]));
    }
    CHECK(max_diff < 1e-12);

    // Swapping the batch entries swaps the outputs.
    Tensor<double> swapped(Shape{2, 2, 8, 8});
    for (Index i = 0; i < n; ++i) {
        swapped[i] = pair[n + i];
        swapped[n + i] = pair[i];
    }
    Tensor<double> joint_swapped = gen.forward(Var<double>::constant(swapped)).value();
    double swap_diff = 0;
    for (Index i = 0; i < n; ++i) {
        swap_diff = std::max(swap_diff, std::abs(joint_swapped[i] - joint[n + i]));
        swap_diff = std::max(swap_diff, std::abs(joint_swapped[n + i] - joint[i]));
    }
    CHECK(swap_diff < 1e-12);
}

TEST_CASE("analytic gradients match finite differences") {
    Generator<double> gen(tiny_config(), 77);
    // Nonzero gates so the transformer branches contribute to the loss.
    for (Index i = 0; i < tiny_config().vit_blocks; ++i)
        gen.params().get("vit.blk" + std::to_string(i) + ".alpha").mutable_value()[0] =
            0.3 + 0.1 * double(i);

    Rng rng(101);
    Var<double> x = Var<double>::leaf(image<double>(1, 2, 8, 8, rng), true);
    Tensor<double> weight = normal_tensor(Shape{1, 2, 8, 8}, rng);

    auto loss_of = [&]() { return sum_all(mul(gen.forward(x), Var<double>::constant(weight))); };

    Var<double> loss = loss_of();
    GradMap<double> grads = backward(loss);

    std::vector<Var<double>> leaves = gen.params().vars();
    leaves.push_back(x);

    Rng pick(555);
    const double eps = 1e-5;
    double max_rel = 0;
    int checked = 0;
    for (Var<double>& leaf : leaves) {
        Tensor<double> g = grads.tensor(leaf);
        const Index coords = std::min<Index>(leaf.numel(), 3);
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
    CHECK(checked >= 100);
    CHECK(max_rel < 1e-4);
    MESSAGE("generator gradcheck: ", checked, " coords, max rel err ", max_rel);
}
