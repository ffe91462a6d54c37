#pragma once

// Distribution-level evaluation: FID (Fréchet distance between Gaussian fits
// of feature embeddings) and KID (unbiased polynomial-kernel MMD² over random
// subsets).  All statistics run in double precision regardless of the model
// scalar, and every randomized choice derives from the manifest seed so a
// report is reproducible bit-for-bit from (manifest, checkpoint, dataset).

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "uvcgan/core/error.hpp"
#include "uvcgan/core/rng.hpp"
#include "uvcgan/core/tensor.hpp"
#include "uvcgan/data/batch.hpp"
#include "uvcgan/generator.hpp"

namespace uvcgan {

// Embedded samples: one row per image.
struct FeatureSet {
    Eigen::MatrixXd features;  // (n_samples, d)
    std::string extractor_id;
    std::string preprocess_id;
};

struct GaussianStats {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
};

// Everything that pins a score: sampling policy, subset shape, preprocessing,
// extractor, and the seed for the subset draws.
struct MetricManifest {
    std::string fid_sample_policy = "full_test_set";
    Index kid_subset_size = 50;
    Index kid_n_subsets = 100;
    std::string preprocess_id = "central_crop_256";
    std::string extractor_id = "identity";
    std::uint64_t seed = 0;

    void validate() const {
        if (kid_subset_size < 2) throw ConfigError("metrics: kid_subset_size must be at least 2");
        if (kid_n_subsets < 1) throw ConfigError("metrics: kid_n_subsets must be positive");
        if (fid_sample_policy != "full_test_set")
            throw ConfigError("metrics: unknown fid_sample_policy '" + fid_sample_policy + "'");
        if (extractor_id.empty()) throw ConfigError("metrics: extractor_id must be set");
        if (preprocess_id.empty()) throw ConfigError("metrics: preprocess_id must be set");
    }

    bool operator==(const MetricManifest&) const = default;
};

struct KidResult {
    double mean = 0;    // raw MMD² statistics; reports scale by 100
    double stddev = 0;  // population std across subsets
};

inline GaussianStats gaussian_stats(const Eigen::MatrixXd& features) {
    if (features.rows() < 2) throw ValueError("gaussian_stats: need at least two samples");
    if (!features.allFinite()) throw NumericError("gaussian_stats: non-finite features");
    GaussianStats s;
    s.mu = features.colwise().mean();
    const Eigen::MatrixXd centered = features.rowwise() - s.mu.transpose();
    s.sigma = centered.transpose() * centered / double(features.rows() - 1);
    return s;
}

inline GaussianStats gaussian_stats(const FeatureSet& f) { return gaussian_stats(f.features); }

namespace detail {

// Eigenvalues below this fraction of the largest one are treated as zero when
// taking matrix square roots; covariances of small sample sets are routinely
// rank-deficient and pick up tiny negative eigenvalues.
inline constexpr double kEigenClipRel = 1e-8;

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    Eigen::VectorXd ev = es.eigenvalues();
    const double floor = kEigenClipRel * std::max(ev.cwiseAbs().maxCoeff(), 0.0);
    for (Eigen::Index i = 0; i < ev.size(); ++i) ev[i] = ev[i] > floor ? std::sqrt(ev[i]) : 0.0;
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline double trace_sqrt(const Eigen::MatrixXd& m) {
    const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    const Eigen::VectorXd& ev = es.eigenvalues();
    const double floor = kEigenClipRel * std::max(ev.cwiseAbs().maxCoeff(), 0.0);
    double acc = 0;
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        if (ev[i] > floor) acc += std::sqrt(ev[i]);
    return acc;
}

// Partial Fisher-Yates: the first `k` entries of a shuffled 0..n-1.
inline std::vector<Eigen::Index> sample_without_replacement(Eigen::Index n, Eigen::Index k,
                                                            Rng& rng) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) idx[std::size_t(i)] = i;
    for (Eigen::Index i = 0; i < k; ++i)
        std::swap(idx[std::size_t(i)], idx[std::size_t(i + rng.uniform_index(n - i))]);
    idx.resize(std::size_t(k));
    return idx;
}

inline Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& rows) {
    Eigen::MatrixXd out(Eigen::Index(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(Eigen::Index(i)) = m.row(rows[i]);
    return out;
}

}  // namespace detail

// Fréchet distance ‖μ₁−μ₂‖² + tr(Σ₁) + tr(Σ₂) − 2·tr((Σ₁^{1/2} Σ₂ Σ₁^{1/2})^{1/2}).
inline double fid(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& sigma1,
                  const Eigen::VectorXd& mu2, const Eigen::MatrixXd& sigma2) {
    const Eigen::Index d = mu1.size();
    if (d < 1) throw ShapeError("fid: zero-dimensional features");
    if (mu2.size() != d || sigma1.rows() != d || sigma1.cols() != d || sigma2.rows() != d ||
        sigma2.cols() != d)
        throw ShapeError("fid: dimension mismatch between moments");
    if (!mu1.allFinite() || !mu2.allFinite() || !sigma1.allFinite() || !sigma2.allFinite())
        throw NumericError("fid: non-finite moments");

    const Eigen::MatrixXd root1 = detail::psd_sqrt(sigma1);
    const Eigen::MatrixXd inner = root1 * (0.5 * (sigma2 + sigma2.transpose())) * root1;
    const double tr_sqrt = detail::trace_sqrt(inner);
    return (mu1 - mu2).squaredNorm() + sigma1.trace() + sigma2.trace() - 2.0 * tr_sqrt;
}

inline double fid(const GaussianStats& a, const GaussianStats& b) {
    return fid(a.mu, a.sigma, b.mu, b.sigma);
}

// Unbiased MMD² between equal-size samples under k(u,v) = (uᵀv/d + 1)³:
// off-diagonal means of the two within-set kernel matrices minus twice the
// full mean of the cross matrix.
inline double mmd2_unbiased(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    const Eigen::Index m = x.rows();
    if (m < 2) throw ValueError("mmd2: need at least two samples per side");
    if (y.rows() != m) throw ShapeError("mmd2: sample counts differ");
    if (y.cols() != x.cols()) throw ShapeError("mmd2: feature dimensions differ");

    const double d = double(x.cols());
    auto kernel = [d](const Eigen::MatrixXd& u, const Eigen::MatrixXd& v) -> Eigen::MatrixXd {
        return (((u * v.transpose()).array() / d) + 1.0).cube().matrix();
    };
    const Eigen::MatrixXd kxx = kernel(x, x);
    const Eigen::MatrixXd kyy = kernel(y, y);
    const Eigen::MatrixXd kxy = kernel(x, y);

    const double mm = double(m);
    return (kxx.sum() - kxx.trace()) / (mm * (mm - 1.0)) +
           (kyy.sum() - kyy.trace()) / (mm * (mm - 1.0)) - 2.0 * kxy.sum() / (mm * mm);
}

// Mean and population std of MMD² over `kid_n_subsets` subset pairs of size
// `kid_subset_size`, drawn without replacement from each side.  Raw values;
// reports multiply by 100.
inline KidResult kid(const FeatureSet& x, const FeatureSet& y, const MetricManifest& manifest) {
    manifest.validate();
    const Eigen::Index m = Eigen::Index(manifest.kid_subset_size);
    if (m > x.features.rows() || m > y.features.rows())
        throw ValueError("kid: subset size " + std::to_string(manifest.kid_subset_size) +
                         " exceeds a population of " +
                         std::to_string(std::min(x.features.rows(), y.features.rows())));
    if (x.features.cols() != y.features.cols())
        throw ShapeError("kid: feature dimensions differ");
    if (!x.features.allFinite() || !y.features.allFinite())
        throw NumericError("kid: non-finite features");

    Rng rng = Rng::stream(manifest.seed, "kid.subsets");
    std::vector<double> values;
    values.reserve(std::size_t(manifest.kid_n_subsets));
    for (Index s = 0; s < manifest.kid_n_subsets; ++s) {
        const auto ix = detail::sample_without_replacement(x.features.rows(), m, rng);
        const auto iy = detail::sample_without_replacement(y.features.rows(), m, rng);
        values.push_back(mmd2_unbiased(detail::take_rows(x.features, ix),
                                       detail::take_rows(y.features, iy)));
    }

    KidResult r;
    for (double v : values) r.mean += v;
    r.mean /= double(values.size());
    double var = 0;
    for (double v : values) var += (v - r.mean) * (v - r.mean);
    r.stddev = std::sqrt(var / double(values.size()));
    return r;
}

// ---------------------------------------------------------------------------
// Feature extractors.  Registered by id string:
//
//   "identity"                 flattened pixels
//   "randproj:<dim>:<seed>"    fixed random linear projection to <dim>
//
// The returned extractor_id is canonical: random projections get a "#<hash>"
// suffix over the projection weights, so the manifest pins the exact network.
// Passing an id that already carries a hash re-verifies it.

namespace detail {

inline std::string hash_suffix(const Eigen::MatrixXd& w) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(
                      fnv1a64(w.data(), std::size_t(w.size()) * sizeof(double))));
    return buf;
}

inline Eigen::MatrixXd randproj_weights(Eigen::Index d_in, Eigen::Index d_out,
                                        std::uint64_t seed) {
    Rng rng = Rng::stream(seed, "metrics.randproj");
    Eigen::MatrixXd w(d_in, d_out);
    const double scale = 1.0 / std::sqrt(double(d_in));
    for (Eigen::Index j = 0; j < d_out; ++j)
        for (Eigen::Index i = 0; i < d_in; ++i) w(i, j) = rng.normal(0.0, scale);
    return w;
}

}  // namespace detail

template <typename S>
FeatureSet extract_features(const Tensor<S>& images, const std::string& extractor_id,
                            const std::string& preprocess_id) {
    if (images.rank() != 4) throw ShapeError("extract_features: expected a (B,C,H,W) batch");
    const Index n = images.shape()[0];
    const Index d_in = images.numel() / std::max<Index>(n, 1);
    if (n < 1) throw ValueError("extract_features: empty batch");
    if (!images.all_finite()) throw NumericError("extract_features: non-finite pixels");

    Eigen::MatrixXd flat(n, d_in);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < d_in; ++j) flat(i, j) = double(images[i * d_in + j]);

    FeatureSet out;
    out.preprocess_id = preprocess_id;

    if (extractor_id == "identity") {
        out.features = std::move(flat);
        out.extractor_id = "identity";
        return out;
    }

    if (extractor_id.rfind("randproj:", 0) == 0) {
        const std::string body = extractor_id.substr(9);
        const auto colon = body.find(':');
        if (colon == std::string::npos)
            throw ConfigError("extract_features: expected randproj:<dim>:<seed>, got '" +
                              extractor_id + "'");
        std::string seed_part = body.substr(colon + 1);
        std::string claimed_hash;
        if (const auto pound = seed_part.find('#'); pound != std::string::npos) {
            claimed_hash = seed_part.substr(pound + 1);
            seed_part = seed_part.substr(0, pound);
        }
        Eigen::Index dim = 0;
        std::uint64_t seed = 0;
        try {
            dim = Eigen::Index(std::stoll(body.substr(0, colon)));
            seed = std::uint64_t(std::stoull(seed_part));
        } catch (const std::exception&) {
            throw ConfigError("extract_features: malformed randproj id '" + extractor_id + "'");
        }
        if (dim < 1) throw ConfigError("extract_features: randproj dim must be positive");

        const Eigen::MatrixXd w = detail::randproj_weights(d_in, dim, seed);
        const std::string hash = detail::hash_suffix(w);
        if (!claimed_hash.empty() && claimed_hash != hash)
            throw ConfigError("extract_features: randproj weight hash mismatch (expected " +
                              claimed_hash + ", derived " + hash + ")");
        out.features = flat * w;
        out.extractor_id = "randproj:" + std::to_string(dim) + ":" + std::to_string(seed) + "#" +
                           hash;
        return out;
    }

    throw ConfigError("extract_features: unregistered extractor '" + extractor_id + "'");
}

// ---------------------------------------------------------------------------
// Full evaluation of a generator pair on preprocessed test sets.

struct DirectionReport {
    std::string direction;  // "a2b" or "b2a"
    Index n_real = 0;
    Index n_translated = 0;
    double fid = 0;
    double kid_mean = 0;  // raw; multiply by 100 for table-style reporting
    double kid_stddev = 0;
};

struct MetricReport {
    MetricManifest manifest;
    std::string checkpoint;               // path, filled in by the caller
    std::uint64_t parameter_hash = 0;     // fingerprint of both generators
    DirectionReport a2b, b2a;
};

namespace detail {

template <typename S>
std::vector<Tensor<S>> translate_all(const Generator<S>& gen, const std::vector<Tensor<S>>& src) {
    NoGradGuard frozen;
    std::vector<Tensor<S>> out;
    out.reserve(src.size());
    for (const Tensor<S>& img : src) {
        Tensor<S> batch = stack_batch<S>({img});
        out.push_back(unstack_batch(gen(Var<S>::constant(batch)).value())[0]);
    }
    return out;
}

template <typename S>
DirectionReport score_direction(const std::string& name, const std::vector<Tensor<S>>& real,
                                const std::vector<Tensor<S>>& fake, const MetricManifest& mf) {
    FeatureSet real_f = extract_features(stack_batch(real), mf.extractor_id, mf.preprocess_id);
    FeatureSet fake_f = extract_features(stack_batch(fake), mf.extractor_id, mf.preprocess_id);

    DirectionReport r;
    r.direction = name;
    r.n_real = Index(real.size());
    r.n_translated = Index(fake.size());
    r.fid = fid(gaussian_stats(real_f), gaussian_stats(fake_f));
    const KidResult k = kid(real_f, fake_f, mf);
    r.kid_mean = k.mean;
    r.kid_stddev = k.stddev;
    return r;
}

}  // namespace detail

// Translates the full test sets in both directions and scores each against
// the real target domain.  Inputs must already be preprocessed (C,H,W).
template <typename S>
MetricReport evaluate_translation(const Generator<S>& gen_ab, const Generator<S>& gen_ba,
                                  const std::vector<Tensor<S>>& test_a,
                                  const std::vector<Tensor<S>>& test_b,
                                  const MetricManifest& manifest) {
    manifest.validate();
    if (test_a.empty() || test_b.empty())
        throw ValueError("evaluate: both test domains must be non-empty");

    const std::vector<Tensor<S>> fake_b = detail::translate_all(gen_ab, test_a);
    const std::vector<Tensor<S>> fake_a = detail::translate_all(gen_ba, test_b);

    MetricReport report;
    report.manifest = manifest;
    report.parameter_hash =
        fnv1a64(std::to_string(gen_ab.params().values_hash()) + ":" +
                std::to_string(gen_ba.params().values_hash()));
    report.a2b = detail::score_direction("a2b", test_b, fake_b, manifest);
    report.b2a = detail::score_direction("b2a", test_a, fake_a, manifest);
    return report;
}

}  // namespace uvcgan
