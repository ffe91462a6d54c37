#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "uvcgan/metrics.hpp"

using namespace uvcgan;

namespace {

GeneratorConfig tiny_gen_cfg() {
    GeneratorConfig g;
    g.in_channels = 2;
    g.base_features = 6;
    g.levels = 2;
    g.token_features = 12;
    g.pe_features = 8;
    g.vit_features = 8;
    g.ffn_features = 16;
    g.vit_blocks = 2;
    g.heads = 2;
    return g;
}

Tensor<float> test_image(int tag, Index hw = 16) {
    Tensor<float> t(Shape{2, hw, hw});
    for (Index i = 0; i < t.numel(); ++i)
        t[i] = float(0.5 + 0.4 * std::sin(0.05 * double(i) + double(tag)));
    return t;
}

Eigen::MatrixXd gaussian_features(Index n, Index d, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd f(n, d);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < d; ++j) f(i, j) = rng.normal();
    return f;
}

MetricManifest small_manifest() {
    MetricManifest m;
    m.kid_subset_size = 2;
    m.kid_n_subsets = 3;
    m.preprocess_id = "raw";
    m.seed = 1;
    return m;
}

}  // namespace

TEST_CASE("gaussian stats: mean and unbiased covariance") {
    Eigen::MatrixXd f(2, 2);
    f << 0, 0, 2, 2;
    GaussianStats s = gaussian_stats(f);
    CHECK(s.mu(0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.mu(1) == doctest::Approx(1.0).epsilon(1e-12));
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) CHECK(s.sigma(i, j) == doctest::Approx(2.0).epsilon(1e-12));

    Eigen::MatrixXd same(3, 2);
    same << 5, -1, 5, -1, 5, -1;
    CHECK(gaussian_stats(same).sigma.cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS_AS(gaussian_stats(Eigen::MatrixXd::Zero(1, 4)), ValueError);

    Eigen::MatrixXd bad = f;
    bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(gaussian_stats(bad), NumericError);
}

TEST_CASE("fid: analytic cases") {
    const Eigen::VectorXd zero2 = Eigen::VectorXd::Zero(2);
    const Eigen::MatrixXd eye2 = Eigen::MatrixXd::Identity(2, 2);

    SUBCASE("identical Gaussians score zero") {
        Eigen::MatrixXd sigma(2, 2);
        sigma << 2.0, 0.5, 0.5, 1.0;
        Eigen::VectorXd mu(2);
        mu << -3.0, 7.0;
        CHECK(std::abs(fid(mu, sigma, mu, sigma)) < 1e-10);
    }

    SUBCASE("equal covariances leave only the mean term") {
        Eigen::VectorXd mu2(2);
        mu2 << 1.0, 0.0;
        CHECK(fid(zero2, eye2, mu2, eye2) == doctest::Approx(1.0).epsilon(1e-10));
        Eigen::VectorXd mu34(2);
        mu34 << 3.0, 4.0;
        CHECK(fid(zero2, eye2, mu34, eye2) == doctest::Approx(25.0).epsilon(1e-10));
    }

    SUBCASE("commuting diagonal covariances") {
        CHECK(fid(zero2, eye2, zero2, 4.0 * eye2) == doctest::Approx(2.0).epsilon(1e-10));
        Eigen::VectorXd mu34(2);
        mu34 << 3.0, 4.0;
        CHECK(fid(mu34, eye2, zero2, 4.0 * eye2) == doctest::Approx(27.0).epsilon(1e-10));
    }

    SUBCASE("symmetric, non-negative, monotone in mean separation") {
        Rng rng(4);
        for (int rep = 0; rep < 10; ++rep) {
            const Index d = 4;
            Eigen::MatrixXd a = gaussian_features(d, d, 100 + std::uint64_t(rep));
            Eigen::MatrixXd b = gaussian_features(d, d, 200 + std::uint64_t(rep));
            Eigen::MatrixXd s1 = a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(d, d);
            Eigen::MatrixXd s2 = b * b.transpose() + 0.1 * Eigen::MatrixXd::Identity(d, d);
            Eigen::VectorXd m1(d), m2(d);
            for (Index i = 0; i < d; ++i) {
                m1(i) = rng.uniform(-1, 1);
                m2(i) = rng.uniform(-1, 1);
            }
            const double ab = fid(m1, s1, m2, s2);
            const double ba = fid(m2, s2, m1, s1);
            CHECK(std::abs(ab - ba) <= 1e-6 * std::max(1.0, std::abs(ab)));
            CHECK(ab >= -1e-6);
            const double farther = fid(m1, s1, (m1 + 2.0 * (m2 - m1)).eval(), s2);
            CHECK(farther > ab);
        }
    }

    SUBCASE("rejects bad moments") {
        CHECK_THROWS_AS(fid(zero2, eye2, Eigen::VectorXd::Zero(3), eye2), ShapeError);
        Eigen::MatrixXd bad = eye2;
        bad(0, 1) = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(fid(zero2, bad, zero2, eye2), NumericError);
    }
}

TEST_CASE("kid: hand kernel arithmetic") {
    FeatureSet x{Eigen::MatrixXd::Zero(2, 1), "identity", "raw"};
    FeatureSet y{Eigen::MatrixXd::Zero(2, 1), "identity", "raw"};
    MetricManifest mf = small_manifest();

    SUBCASE("identical point masses score zero") {
        KidResult r = kid(x, y, mf);
        CHECK(r.mean == 0.0);
        CHECK(r.stddev == 0.0);
    }

    SUBCASE("unit separation in one dimension scores seven") {
        y.features = Eigen::MatrixXd::Ones(2, 1);
        KidResult r = kid(x, y, mf);
        CHECK(r.mean == 7.0);
        CHECK(r.stddev == 0.0);
    }

    SUBCASE("contract errors") {
        mf.kid_subset_size = 3;
        CHECK_THROWS_AS(kid(x, y, mf), ValueError);
        mf.kid_subset_size = 1;
        CHECK_THROWS_AS(kid(x, y, mf), ConfigError);
        mf = small_manifest();
        y.features = Eigen::MatrixXd::Zero(2, 2);
        CHECK_THROWS_AS(kid(x, y, mf), ShapeError);
        y.features = Eigen::MatrixXd::Zero(2, 1);
        y.features(0, 0) = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(kid(x, y, mf), NumericError);
    }
}

TEST_CASE("kid: manifest seed pins the subset draws") {
    FeatureSet x{gaussian_features(40, 4, 1), "identity", "raw"};
    FeatureSet y{gaussian_features(40, 4, 2), "identity", "raw"};
    MetricManifest mf;
    mf.kid_subset_size = 8;
    mf.kid_n_subsets = 16;
    mf.seed = 5;

    KidResult r1 = kid(x, y, mf);
    KidResult r2 = kid(x, y, mf);
    CHECK(r1.mean == r2.mean);
    CHECK(r1.stddev == r2.stddev);

    mf.seed = 6;
    KidResult r3 = kid(x, y, mf);
    CHECK(r3.mean != r1.mean);
}

TEST_CASE("kid: unbiased near zero for identically distributed sides") {
    FeatureSet x{gaussian_features(500, 8, 11), "identity", "raw"};
    FeatureSet y{gaussian_features(500, 8, 12), "identity", "raw"};
    MetricManifest mf;
    mf.kid_subset_size = 100;
    mf.kid_n_subsets = 50;
    mf.seed = 3;

    KidResult r = kid(x, y, mf);
    CHECK(std::abs(r.mean) < 3.0 * r.stddev);
}

TEST_CASE("feature extractors") {
    Tensor<float> batch(Shape{2, 1, 2, 2});
    for (Index i = 0; i < 8; ++i) batch[i] = float(i) / 8.0f;

    SUBCASE("identity flattens pixels") {
        FeatureSet f = extract_features(batch, "identity", "raw");
        CHECK(f.extractor_id == "identity");
        CHECK(f.preprocess_id == "raw");
        CHECK(f.features.rows() == 2);
        CHECK(f.features.cols() == 4);
        for (Index i = 0; i < 2; ++i)
            for (Index j = 0; j < 4; ++j)
                CHECK(f.features(i, j) == double(batch[i * 4 + j]));

        FeatureSet again = extract_features(batch, "identity", "raw");
        CHECK(f.features == again.features);
    }

    SUBCASE("random projection is pinned by seed and hash") {
        FeatureSet f = extract_features(batch, "randproj:3:7", "raw");
        CHECK(f.features.rows() == 2);
        CHECK(f.features.cols() == 3);
        CHECK(f.extractor_id.rfind("randproj:3:7#", 0) == 0);
        CHECK(f.extractor_id.size() == std::string("randproj:3:7#").size() + 16);

        FeatureSet again = extract_features(batch, "randproj:3:7", "raw");
        CHECK(f.features == again.features);
        CHECK(f.extractor_id == again.extractor_id);

        // The canonical id round-trips: the embedded hash is re-verified.
        FeatureSet pinned = extract_features(batch, f.extractor_id, "raw");
        CHECK(pinned.features == f.features);
        CHECK(pinned.extractor_id == f.extractor_id);

        std::string tampered = f.extractor_id;
        tampered.back() = tampered.back() == '0' ? '1' : '0';
        CHECK_THROWS_AS(extract_features(batch, tampered, "raw"), ConfigError);

        FeatureSet other = extract_features(batch, "randproj:3:8", "raw");
        CHECK(other.features != f.features);
    }

    SUBCASE("rejects malformed or unknown ids") {
        CHECK_THROWS_AS(extract_features(batch, "randproj:0:1", "raw"), ConfigError);
        CHECK_THROWS_AS(extract_features(batch, "randproj:abc:1", "raw"), ConfigError);
        CHECK_THROWS_AS(extract_features(batch, "randproj:3", "raw"), ConfigError);
        CHECK_THROWS_AS(extract_features(batch, "inception_v3", "raw"), ConfigError);
    }

    SUBCASE("rejects bad batches") {
        CHECK_THROWS_AS(extract_features(Tensor<float>::zeros(Shape{1, 2, 2}), "identity", "raw"),
                        ShapeError);
        Tensor<float> nan_batch = batch;
        nan_batch[0] = std::numeric_limits<float>::quiet_NaN();
        CHECK_THROWS_AS(extract_features(nan_batch, "identity", "raw"), NumericError);
    }
}

TEST_CASE("real-versus-real calibration stays near zero") {
    Eigen::MatrixXd pop = gaussian_features(1000, 6, 21);
    FeatureSet first{pop.topRows(500), "identity", "raw"};
    FeatureSet second{pop.bottomRows(500), "identity", "raw"};

    const double self_fid = fid(gaussian_stats(first), gaussian_stats(second));
    CHECK(self_fid >= -1e-6);
    CHECK(self_fid < 1.0);

    MetricManifest mf;
    mf.kid_subset_size = 50;
    mf.kid_n_subsets = 40;
    mf.seed = 9;
    KidResult r = kid(first, second, mf);
    CHECK(std::abs(r.mean) < 3.0 * r.stddev);
}

TEST_CASE("evaluate: full two-direction report") {
    Generator<float> gen_ab(tiny_gen_cfg(), 101);
    Generator<float> gen_ba(tiny_gen_cfg(), 202);

    std::vector<Tensor<float>> test_a, test_b;
    for (int i = 0; i < 5; ++i) test_a.push_back(test_image(i));
    for (int i = 0; i < 4; ++i) test_b.push_back(test_image(50 + i));

    MetricManifest mf;
    mf.kid_subset_size = 3;
    mf.kid_n_subsets = 10;
    mf.preprocess_id = "raw16";
    mf.seed = 11;

    MetricReport r = evaluate_translation(gen_ab, gen_ba, test_a, test_b, mf);
    CHECK(r.manifest == mf);
    CHECK(r.a2b.direction == "a2b");
    CHECK(r.b2a.direction == "b2a");
    CHECK(r.a2b.n_real == 4);        // scored against the real B domain
    CHECK(r.a2b.n_translated == 5);  // one translation per A image
    CHECK(r.b2a.n_real == 5);
    CHECK(r.b2a.n_translated == 4);
    for (const DirectionReport* d : {&r.a2b, &r.b2a}) {
        CHECK(std::isfinite(d->fid));
        CHECK(d->fid >= -1e-6);
        CHECK(std::isfinite(d->kid_mean));
        CHECK(d->kid_stddev >= 0.0);
    }
    CHECK(r.parameter_hash != 0);

    // Bit-identical reruns: same checkpoint, dataset, and manifest.
    MetricReport r2 = evaluate_translation(gen_ab, gen_ba, test_a, test_b, mf);
    CHECK(r.parameter_hash == r2.parameter_hash);
    CHECK(r.a2b.fid == r2.a2b.fid);
    CHECK(r.b2a.fid == r2.b2a.fid);
    CHECK(r.a2b.kid_mean == r2.a2b.kid_mean);
    CHECK(r.b2a.kid_mean == r2.b2a.kid_mean);
    CHECK(r.a2b.kid_stddev == r2.a2b.kid_stddev);

    SUBCASE("contract errors propagate") {
        CHECK_THROWS_AS(evaluate_translation(gen_ab, gen_ba, {}, test_b, mf), ValueError);
        MetricManifest huge = mf;
        huge.kid_subset_size = 300;
        CHECK_THROWS_AS(evaluate_translation(gen_ab, gen_ba, test_a, test_b, huge), ValueError);
    }
}
