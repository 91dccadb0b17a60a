#include "latcomp/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <random>

#include <spdlog/spdlog.h>

namespace latcomp {
inline namespace LATCOMP_ABI {

namespace {

void check_masked_args(const ImageBatch& x, const ImageBatch& y, const Mask& m) {
    require_same_shape(x.values, y.values, "masked_l1");
    require(m.batch() == x.batch() && m.height() == x.height() && m.width() == x.width(), ErrorCode::ShapeMismatch,
            "masked_l1: mask " + shape_str(m.values.shape()) + " vs images " + shape_str(x.values.shape()));
}

// Sums m * |x - y| and the mask area for sample n.
std::pair<double, double> masked_abs_sum(const ImageBatch& x, const ImageBatch& y, const Mask& m, int n) {
    const int C = x.channels();
    const std::size_t P = static_cast<std::size_t>(x.height()) * x.width();
    const Real* a = x.values.sample(n);
    const Real* b = y.values.sample(n);
    const Real* mv = m.values.sample(n);
    double s = 0, area = 0;
    for (std::size_t p = 0; p < P; ++p) {
        if (mv[p] == 0) continue;
        area += 1;
        for (int c = 0; c < C; ++c) s += std::abs(double(a[c * P + p]) - double(b[c * P + p]));
    }
    return {s, area * C};
}

}  // namespace

double masked_l1(const ImageBatch& x, const ImageBatch& y, const Mask& m) {
    check_masked_args(x, y, m);
    double s = 0, denom = 0;
    for (int n = 0; n < x.batch(); ++n) {
        const auto [a, d] = masked_abs_sum(x, y, m, n);
        s += a;
        denom += d;
    }
    require(denom > 0, ErrorCode::EmptyMask, "masked_l1 with an all-zero mask");
    return s / denom;
}

std::vector<double> masked_l1_per_sample(const ImageBatch& x, const ImageBatch& y, const Mask& m) {
    check_masked_args(x, y, m);
    std::vector<double> out;
    for (int n = 0; n < x.batch(); ++n) {
        const auto [a, d] = masked_abs_sum(x, y, m, n);
        require(d > 0, ErrorCode::EmptyMask, "masked_l1: sample " + std::to_string(n) + " has an all-zero mask");
        out.push_back(a / d);
    }
    return out;
}

void save_features(const FeatureSet& f, const fs::path& dir) {
    Checkpoint c;
    c.meta = {{"model", "features"}, {"extractor_id", f.extractor_id}, {"count", f.count()}, {"dim", f.dim()}};
    c.tensors.push_back({"values", f.values});
    save_checkpoint(dir, c);
}

FeatureSet load_features(const fs::path& dir) {
    const Checkpoint c = load_checkpoint(dir);
    require(c.meta.value("model", "") == "features", ErrorCode::IoError, dir.string() + " is not a feature set");
    FeatureSet f{c.tensor("values"), c.meta.value("extractor_id", "")};
    require(f.values.rank() == 2, ErrorCode::IoError, dir.string() + ": feature values must be [n, d]");
    return f;
}

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void moments(const FeatureSet& f, VectorXd& mu, MatrixXd& cov) {
    const int n = f.count(), d = f.dim();
    MatrixXd x(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) x(i, j) = f.values[static_cast<std::size_t>(i) * d + j];
    mu = x.colwise().mean();
    const MatrixXd centered = x.rowwise() - mu.transpose();
    cov = centered.transpose() * centered / double(n - 1);
}

// Symmetric PSD square root with negative eigenvalues clamped to 0.
MatrixXd psd_sqrt(const MatrixXd& a, const char* what) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (a + a.transpose()));
    require(es.info() == Eigen::Success, ErrorCode::NumericalFailure,
            std::string("eigendecomposition of ") + what + " did not converge");
    const VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const FeatureSet& a, const FeatureSet& b) {
    require(a.values.rank() == 2 && b.values.rank() == 2 && a.dim() == b.dim(), ErrorCode::ShapeMismatch,
            "frechet_distance: feature dims differ");
    require(a.count() >= 2 && b.count() >= 2, ErrorCode::InsufficientSamples,
            "frechet_distance needs at least 2 samples per set");
    require(a.values.all_finite() && b.values.all_finite(), ErrorCode::NumericalFailure, "non-finite features");
    VectorXd mu_a, mu_b;
    MatrixXd cov_a, cov_b;
    moments(a, mu_a, cov_a);
    moments(b, mu_b, cov_b);
    // Tr sqrt(Sa Sb) = Tr sqrt(Sa^1/2 Sb Sa^1/2); the latter is symmetric PSD.
    const MatrixXd ra = psd_sqrt(cov_a, "covariance");
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(ra * cov_b * ra, Eigen::EigenvaluesOnly);
    require(es.info() == Eigen::Success, ErrorCode::NumericalFailure,
            "eigendecomposition of the covariance product did not converge");
    const VectorXd lambda = es.eigenvalues();
    const double tr_sqrt = lambda.cwiseMax(0.0).cwiseSqrt().sum();
    const double fid = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2 * tr_sqrt;
    require(std::isfinite(fid), ErrorCode::NumericalFailure,
            "frechet_distance is not finite (min eigenvalue " + std::to_string(lambda.minCoeff()) + ")");
    if (fid < 0) {
        if (fid < -1e-6) spdlog::warn("frechet_distance: clamping negative value {} to 0", fid);
        return 0.0;
    }
    return fid;
}

namespace {

double squared_distance(const Real* a, const Real* b, int d) {
    double s = 0;
    for (int j = 0; j < d; ++j) {
        const double t = double(a[j]) - double(b[j]);
        s += t * t;
    }
    return s;
}

}  // namespace

DensityCoverage density_coverage(const FeatureSet& real, const FeatureSet& fake, int k) {
    require(k >= 1, ErrorCode::InvalidArgument, "k must be >= 1");
    require(real.dim() == fake.dim(), ErrorCode::ShapeMismatch, "density_coverage: feature dims differ");
    const int N = real.count(), M = fake.count(), d = real.dim();
    require(N > k && M > k, ErrorCode::InsufficientSamples,
            "density_coverage needs more than k=" + std::to_string(k) + " samples in each set");
    const Real* R = real.values.data();
    const Real* F = fake.values.data();
    // Squared radius of each real ball.
    std::vector<double> radius2(static_cast<std::size_t>(N));
    std::vector<double> row;
    for (int i = 0; i < N; ++i) {
        row.clear();
        for (int j = 0; j < N; ++j)
            if (j != i) row.push_back(squared_distance(R + std::size_t(i) * d, R + std::size_t(j) * d, d));
        std::nth_element(row.begin(), row.begin() + (k - 1), row.end());
        radius2[static_cast<std::size_t>(i)] = row[static_cast<std::size_t>(k - 1)];
    }
    std::size_t hits = 0, covered = 0;
    std::vector<char> is_covered(static_cast<std::size_t>(N), 0);
    for (int j = 0; j < M; ++j) {
        for (int i = 0; i < N; ++i) {
            if (squared_distance(R + std::size_t(i) * d, F + std::size_t(j) * d, d) < radius2[std::size_t(i)]) {
                ++hits;
                is_covered[std::size_t(i)] = 1;
            }
        }
    }
    for (char c : is_covered) covered += c ? 1 : 0;
    return {double(hits) / (double(k) * M), double(covered) / N};
}

double fid_delta(const FeatureSet& composites, const FeatureSet& reencoded, const FeatureSet& reference) {
    require(composites.extractor_id == reference.extractor_id && reencoded.extractor_id == reference.extractor_id,
            ErrorCode::ExtractorMismatch, "fid_delta: feature sets come from different extractors");
    return frechet_distance(composites, reference) - frechet_distance(reencoded, reference);
}

// ---------------------------------------------------------------------------

RandomConvEmbedding::RandomConvEmbedding() {
    net_.add<nn::Conv2d>(3, 16, 3, 1, 1);
    net_.add<nn::LeakyRelu>(Real(0.2));
    net_.add<nn::AvgPool2>();
    net_.add<nn::Conv2d>(16, 32, 3, 1, 1);
    net_.add<nn::LeakyRelu>(Real(0.2));
    net_.add<nn::AvgPool2>();
    net_.add<nn::Conv2d>(32, 64, 3, 1, 1);
    net_.add<nn::LeakyRelu>(Real(0.2));
    net_.add<nn::GlobalAvgPool>();
    Rng rng = substream(kSeed, "feature-extractor");
    nn::init_he(net_, rng);
    std::normal_distribution<double> bias(0.0, 0.1);
    for (Tensor* p : net_.params())
        if (p->rank() == 1)
            for (Real& v : p->values()) v = static_cast<Real>(bias(rng));
}

Tensor RandomConvEmbedding::extract(const ImageBatch& x) const {
    require(x.channels() == 3 && x.height() % 4 == 0 && x.width() % 4 == 0, ErrorCode::ShapeMismatch,
            "feature extractor expects RGB images with sides divisible by 4");
    constexpr int kChunk = 32;
    std::vector<Tensor> parts;
    for (int b = 0; b < x.batch(); b += kChunk)
        parts.push_back(net_.forward(x.values.slice(b, std::min(x.batch(), b + kChunk)), nullptr));
    return concat_batch(parts);
}

namespace {

struct Registry {
    std::mutex mu;
    std::map<std::string, std::shared_ptr<const FeatureExtractor>> entries;
};

Registry& registry() {
    static Registry r;
    static std::once_flag once;
    std::call_once(once, [] { r.entries[RandomConvEmbedding::kId] = std::make_shared<RandomConvEmbedding>(); });
    return r;
}

}  // namespace

void register_extractor(std::shared_ptr<const FeatureExtractor> extractor) {
    require(extractor != nullptr, ErrorCode::InvalidArgument, "null extractor");
    Registry& r = registry();
    std::lock_guard lock(r.mu);
    r.entries[extractor->id()] = std::move(extractor);
}

std::shared_ptr<const FeatureExtractor> find_extractor(const std::string& id) {
    Registry& r = registry();
    std::lock_guard lock(r.mu);
    auto it = r.entries.find(id);
    require(it != r.entries.end(), ErrorCode::UnknownExtractor, "unknown feature extractor '" + id + "'");
    return it->second;
}

std::vector<std::string> extractor_ids() {
    Registry& r = registry();
    std::lock_guard lock(r.mu);
    std::vector<std::string> ids;
    for (const auto& [id, _] : r.entries) ids.push_back(id);
    return ids;
}

FeatureSet extract_features(const ImageBatch& x, const std::string& extractor_id) {
    const auto ex = find_extractor(extractor_id);
    return {ex->extract(x), ex->id()};
}

Json metrics_report_to_json(const MetricsReport& r) {
    return {{"masked_l1", r.masked_l1}, {"fid", r.fid},           {"fid_delta", r.fid_delta},
            {"density", r.density},     {"coverage", r.coverage}, {"n_samples", r.n_samples},
            {"k_neighbors", r.k_neighbors}, {"extractor_id", r.extractor_id}};
}

MetricsReport metrics_report_from_json(const Json& j) {
    MetricsReport r;
    r.masked_l1 = j.at("masked_l1").get<double>();
    r.fid = j.at("fid").get<double>();
    r.fid_delta = j.at("fid_delta").get<double>();
    r.density = j.at("density").get<double>();
    r.coverage = j.at("coverage").get<double>();
    r.n_samples = j.at("n_samples").get<int>();
    r.k_neighbors = j.at("k_neighbors").get<int>();
    r.extractor_id = j.at("extractor_id").get<std::string>();
    return r;
}

}  // namespace LATCOMP_ABI
}  // namespace latcomp
