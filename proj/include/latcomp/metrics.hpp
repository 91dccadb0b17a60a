#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "latcomp/io.hpp"
#include "latcomp/nn.hpp"
#include "latcomp/types.hpp"

namespace latcomp {
inline namespace LATCOMP_ABI {

/// sum(m * |x - y|) / (ones(m) * channels) over the whole batch.
double masked_l1(const ImageBatch& x, const ImageBatch& y, const Mask& m);
std::vector<double> masked_l1_per_sample(const ImageBatch& x, const ImageBatch& y, const Mask& m);

struct FeatureSet {
    Tensor values;  // [n, d]
    std::string extractor_id;

    int count() const { return values.dim(0); }
    int dim() const { return values.dim(1); }
};

void save_features(const FeatureSet& f, const fs::path& dir);
FeatureSet load_features(const fs::path& dir);

/// Fréchet distance between Gaussians fitted to the two sets (unbiased
/// covariances). Tiny negative results are clamped to 0.
double frechet_distance(const FeatureSet& a, const FeatureSet& b);

struct DensityCoverage {
    double density = 0;
    double coverage = 0;
};

/// k-NN manifold metrics. A real sample's ball has radius equal to the distance
/// to its k-th nearest other real sample; membership is strict (d < r).
DensityCoverage density_coverage(const FeatureSet& real, const FeatureSet& fake, int k = 5);

/// FID(composites, reference) - FID(reencoded, reference).
double fid_delta(const FeatureSet& composites, const FeatureSet& reencoded, const FeatureSet& reference);

// ---------------------------------------------------------------------------
// Feature extractors

class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::string id() const = 0;
    virtual int feat_dim() const = 0;
    virtual Tensor extract(const ImageBatch& x) const = 0;  // [n, feat_dim]
};

/// Seed-pinned random convolutional embedding, globally average pooled.
class RandomConvEmbedding final : public FeatureExtractor {
public:
    static constexpr const char* kId = "random-conv-64";
    static constexpr std::uint64_t kSeed = 1729;

    RandomConvEmbedding();
    std::string id() const override { return kId; }
    int feat_dim() const override { return 64; }
    Tensor extract(const ImageBatch& x) const override;

private:
    nn::Sequential net_;
};

/// Registers (or replaces) an extractor under its id. The builtin is always present.
void register_extractor(std::shared_ptr<const FeatureExtractor> extractor);
std::shared_ptr<const FeatureExtractor> find_extractor(const std::string& id);
std::vector<std::string> extractor_ids();

FeatureSet extract_features(const ImageBatch& x, const std::string& extractor_id = RandomConvEmbedding::kId);

struct MetricsReport {
    double masked_l1 = 0;
    double fid = 0;
    double fid_delta = 0;
    double density = 0;
    double coverage = 0;
    int n_samples = 0;
    int k_neighbors = 5;
    std::string extractor_id = RandomConvEmbedding::kId;
};

Json metrics_report_to_json(const MetricsReport& r);
MetricsReport metrics_report_from_json(const Json& j);

}  // namespace LATCOMP_ABI
}  // namespace latcomp
