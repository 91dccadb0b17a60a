#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "latcomp/metrics.hpp"

using namespace latcomp;

namespace {

FeatureSet gaussian(int n, std::vector<double> mean, std::vector<double> stddev, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0, 1);
    const int d = static_cast<int>(mean.size());
    Tensor t({n, d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) t[std::size_t(i) * d + j] = static_cast<Real>(mean[j] + stddev[j] * nd(rng));
    return {t, "oracle"};
}

}  // namespace

TEST_CASE("Frechet distance of diagonal Gaussians matches the closed form") {
    // With diagonal covariances: |mu_a - mu_b|^2 + sum (s_a - s_b)^2.
    const FeatureSet a = gaussian(200000, {0, 0, 0}, {1, 2, 0.5}, 1);
    const FeatureSet b = gaussian(200000, {1, -1, 0}, {2, 2, 1}, 2);
    const double expected = 1 + 1 + 0 + 1 + 0 + 0.25;
    CHECK(frechet_distance(a, b) == doctest::Approx(expected).epsilon(0.03));
    CHECK(frechet_distance(a, a) <= 1e-6);
    CHECK(frechet_distance(a, b) == doctest::Approx(frechet_distance(b, a)).epsilon(1e-6));
}

TEST_CASE("Frechet distance is symmetric and ignores sample order") {
    const FeatureSet a = gaussian(300, {0, 1, 0, 2}, {1, 0.5, 2, 1}, 5);
    const FeatureSet b = gaussian(400, {1, 1, -1, 0}, {1, 1, 1, 3}, 6);
    CHECK(std::abs(frechet_distance(a, b) - frechet_distance(b, a)) <= 1e-8);
    FeatureSet shuffled = a;
    const int d = a.dim();
    for (int i = 0; i < a.count(); ++i)
        for (int j = 0; j < d; ++j)
            shuffled.values[std::size_t(i) * d + j] = a.values[std::size_t(a.count() - 1 - i) * d + j];
    CHECK(frechet_distance(shuffled, b) == doctest::Approx(frechet_distance(a, b)).epsilon(1e-9));
}

TEST_CASE("FID delta on analytic Gaussian triples") {
    // Unit covariances everywhere: FID reduces to the squared mean distance,
    // 4 for the composites and 1 for the re-encoded set.
    const FeatureSet ref = gaussian(100000, {0, 0, 0, 0}, {1, 1, 1, 1}, 7);
    const FeatureSet comp = gaussian(100000, {2, 0, 0, 0}, {1, 1, 1, 1}, 8);
    const FeatureSet reenc = gaussian(100000, {0, 1, 0, 0}, {1, 1, 1, 1}, 9);
    CHECK(fid_delta(comp, reenc, ref) == doctest::Approx(3).epsilon(0.05));
    CHECK(fid_delta(comp, comp, ref) == 0);
    CHECK(fid_delta(reenc, comp, ref) == doctest::Approx(-fid_delta(comp, reenc, ref)).epsilon(1e-12));
}

TEST_CASE("density and coverage extremes") {
    const FeatureSet real = gaussian(40, {0, 0}, {1, 1}, 10);
    CHECK(density_coverage(real, real, 5).coverage == 1.0);
    FeatureSet far = real;
    for (Real& v : far.values.values()) v += 1000;
    const DensityCoverage dc = density_coverage(real, far, 5);
    CHECK(dc.density == 0);
    CHECK(dc.coverage == 0);
    try {
        density_coverage(gaussian(5, {0, 0}, {1, 1}, 1), real, 5);
        FAIL("expected INSUFFICIENT_SAMPLES");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InsufficientSamples);
    }
}

TEST_CASE("Frechet distance input checks") {
    const FeatureSet a = gaussian(10, {0, 0}, {1, 1}, 1), b = gaussian(10, {0, 0, 0}, {1, 1, 1}, 2);
    CHECK_THROWS_AS(frechet_distance(a, b), Error);
    const FeatureSet one = gaussian(1, {0, 0}, {1, 1}, 3);
    CHECK_THROWS_AS(frechet_distance(one, a), Error);
}

TEST_CASE("density and coverage hand fixture") {
    // Reals on a line at 0, 1, 2, 3 with k = 1: every radius is 1.
    const FeatureSet real{Tensor({4, 1}, std::vector<Real>{0, 1, 2, 3}), "x"};
    // 0.5 lies strictly inside the balls of 0 and 1; 10 is in none.
    const FeatureSet fake{Tensor({2, 1}, std::vector<Real>{Real(0.5), 10}), "x"};
    const DensityCoverage dc = density_coverage(real, fake, 1);
    CHECK(dc.density == doctest::Approx(2.0 / 2.0));
    CHECK(dc.coverage == doctest::Approx(2.0 / 4.0));
    // A fake point exactly on a ball boundary is not counted.
    const FeatureSet edge{Tensor({2, 1}, std::vector<Real>{4, 10}), "x"};
    const DensityCoverage de = density_coverage(real, edge, 1);
    CHECK(de.density == 0);
    CHECK(de.coverage == 0);
    CHECK_THROWS_AS(density_coverage(real, fake, 4), Error);
}

TEST_CASE("masked L1 fixtures") {
    const ImageBatch x = testutil::random_image(2, 3, 4, 4, 1);
    CHECK(masked_l1(x, x, Mask::ones(2, 4, 4)) == 0);
    Tensor zero({1, 1, 1, 2}, Real(0)), one({1, 1, 1, 2}, Real(1));
    const Mask first(Tensor({1, 1, 1, 2}, std::vector<Real>{1, 0}));
    CHECK(masked_l1(ImageBatch(zero), ImageBatch(one), first) == 1);
    try {
        masked_l1(x, x, Mask::zeros(2, 4, 4));
        FAIL("expected EMPTY_MASK");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyMask);
    }
    CHECK(masked_l1(ImageBatch(Tensor({1, 3, 2, 2}, Real(1))), ImageBatch(Tensor({1, 3, 2, 2}, Real(0))),
                    Mask::ones(1, 2, 2)) == 1.0);
    const ImageBatch y = testutil::random_image(2, 3, 4, 4, 7);
    double mae = 0;
    for (std::size_t i = 0; i < x.values.size(); ++i) mae += std::abs(double(x.values[i]) - y.values[i]);
    CHECK(masked_l1(x, y, Mask::ones(2, 4, 4)) == doctest::Approx(mae / x.values.size()));
    const auto per = masked_l1_per_sample(x, testutil::random_image(2, 3, 4, 4, 2), Mask::ones(2, 4, 4));
    CHECK(per.size() == 2);
}

TEST_CASE("feature extractor registry") {
    CHECK(find_extractor(RandomConvEmbedding::kId) != nullptr);
    try {
        find_extractor("inception-v3");
        FAIL("expected UNKNOWN_EXTRACTOR");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::UnknownExtractor);
    }
    const ImageBatch x = testutil::random_image(5, 3, 32, 32, 1);
    const FeatureSet f = extract_features(x);
    CHECK(f.count() == 5);
    CHECK(f.dim() == 64);
    CHECK(f.extractor_id == RandomConvEmbedding::kId);
    CHECK(extract_features(x).values == f.values);

    // Distinct oracle scenes get distinct features.
    const auto g = testutil::oracle(32);
    const FeatureSet scenes = extract_features(generate(*g, sample_latent(g->latent_spec(), 50, 3)));
    double min_dist = INFINITY;
    for (int i = 0; i < 50; ++i)
        for (int j = i + 1; j < 50; ++j) {
            double s = 0;
            for (int k = 0; k < 64; ++k) {
                const double diff = scenes.values[std::size_t(i) * 64 + k] - scenes.values[std::size_t(j) * 64 + k];
                s += diff * diff;
            }
            min_dist = std::min(min_dist, s);
        }
    CHECK(min_dist > 0);

    FeatureSet other = f;
    other.extractor_id = "other";
    try {
        fid_delta(other, f, f);
        FAIL("expected EXTRACTOR_MISMATCH");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ExtractorMismatch);
    }
}

TEST_CASE("feature sets and reports round trip") {
    testutil::TempDir dir("feat");
    const FeatureSet f = gaussian(7, {0, 1, 2}, {1, 1, 1}, 4);
    save_features(f, dir.path);
    const FeatureSet back = load_features(dir.path);
    CHECK(back.values == f.values);
    CHECK(back.extractor_id == f.extractor_id);

    MetricsReport r;
    r.masked_l1 = 0.25;
    r.fid = 3.5;
    r.fid_delta = -0.5;
    r.density = 0.9;
    r.coverage = 0.8;
    r.n_samples = 12;
    const MetricsReport rb = metrics_report_from_json(metrics_report_to_json(r));
    CHECK(rb.fid_delta == r.fid_delta);
    CHECK(rb.n_samples == 12);
    CHECK(rb.extractor_id == r.extractor_id);
}
