#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "latcomp/generators.hpp"
#include "latcomp/io.hpp"
#include "latcomp/nn.hpp"
#include "latcomp/types.hpp"

namespace latcomp {
inline namespace LATCOMP_ABI {

struct LossWeights {
    Real image_mse = 1;
    Real perceptual = 1;
    Real latent = 1;
};

struct EncoderConfig {
    int backbone_depth = 1;   // residual blocks at the 4x4 stage
    int input_channels = 4;   // 4 = RGB + mask, 3 = mask-unaware ablation
    int resolution = 64;
    int base_channels = 16;
    int hidden = 256;
    LatentSpec latent_spec = LatentSpec::per_layer(20, 1);
    LossWeights loss_weights;
    std::uint64_t seed = 0;   // weight init

    void validate() const;
};

Json encoder_config_to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const Json& j);

/// Differentiable encoder evaluation: latent plus a pullback that accumulates
/// parameter gradients (aligned with Encoder::params()).
struct EncoderTrace {
    LatentCode latent;
    std::function<void(const Tensor& grad_latent, std::vector<Tensor>& grads)> pullback;
};

/// The latent regressor E: (masked image, mask) -> latent code. A strided
/// convolutional backbone with residual blocks at the coarsest stage and a
/// two-layer head. Copying an Encoder copies its weights.
class Encoder {
public:
    explicit Encoder(EncoderConfig config);
    Encoder(EncoderConfig config, nn::Sequential net, std::int64_t step_count);

    const EncoderConfig& config() const { return config_; }
    std::int64_t step_count() const { return step_count_; }
    void set_step_count(std::int64_t s) { step_count_ = s; }

    /// Inference. `m` is required iff the encoder has a mask channel.
    LatentCode encode(const ImageBatch& x_m, const Mask* m) const;
    EncoderTrace trace(const ImageBatch& x_m, const Mask* m) const;

    std::vector<Tensor*> params() { return net_.params(); }
    std::vector<const Tensor*> params() const { return net_.params(); }
    std::vector<Tensor> zero_grads() const { return net_.zero_grads(); }
    std::uint64_t checksum() const { return net_.checksum(); }
    const nn::Sequential& network() const { return net_; }

    Checkpoint to_checkpoint() const;
    static Encoder from_checkpoint(const Checkpoint& c);

private:
    Tensor input_tensor(const ImageBatch& x_m, const Mask* m) const;

    EncoderConfig config_;
    nn::Sequential net_;
    std::int64_t step_count_ = 0;
};

using EncoderHandle = std::shared_ptr<const Encoder>;

nn::Sequential build_encoder_net(const EncoderConfig& config);

void save_encoder(const Encoder& e, const fs::path& dir);
Encoder load_encoder(const fs::path& dir);

LatentCode encode(const Encoder& e, const ImageBatch& x_m, const Mask* m);
/// Masks `x` and feeds the mask channel when the encoder has one. The
/// mask-unaware encoder sees only the zero-filled pixels.
LatentCode encode_masked(const Encoder& e, const ImageBatch& x, const Mask& m);
/// G(decoder_input(E(x ⊗ m, m))).
ImageBatch reconstruct(const Encoder& e, const Generator& g, const ImageBatch& x, const Mask& m);

// ---------------------------------------------------------------------------
// Perceptual distance

struct PerceptualTrace {
    std::vector<Real> distance;  // per sample
    /// Gradient of sum_n weight[n] * distance[n] w.r.t. the second argument.
    std::function<Tensor(std::span<const Real> weight)> pullback;
};

/// Image distance used in place of a learned perceptual metric.
class PerceptualDistance {
public:
    virtual ~PerceptualDistance() = default;
    virtual std::vector<Real> distance(const ImageBatch& x, const ImageBatch& y) const = 0;
    virtual PerceptualTrace trace(const ImageBatch& x, const ImageBatch& y) const = 0;
};

/// Multi-scale distance through a fixed, seed-pinned random convolutional
/// stack: three scales, features unit-normalised per pixel along channels,
/// squared L2 averaged over pixels and summed over scales.
class RandomFeaturePerceptual final : public PerceptualDistance {
public:
    static constexpr std::uint64_t kDefaultSeed = 20210512;
    explicit RandomFeaturePerceptual(std::uint64_t seed = kDefaultSeed);

    std::vector<Real> distance(const ImageBatch& x, const ImageBatch& y) const override;
    PerceptualTrace trace(const ImageBatch& x, const ImageBatch& y) const override;

private:
    std::vector<Tensor> features(const Tensor& x, std::vector<nn::Cache>* caches) const;

    std::vector<nn::Sequential> stages_;
};

/// Process-wide default instance.
const PerceptualDistance& default_perceptual();

std::vector<Real> perceptual_distance(const ImageBatch& x, const ImageBatch& y);

// ---------------------------------------------------------------------------
// Latent recovery losses

/// 1 - cos(z, z_hat) per sample. SPHERICAL_Z only.
std::vector<Real> latent_loss_cosine(const LatentCode& z, const LatentCode& z_hat);
/// d(sum_n weight[n] * cosine_loss[n]) / d z_hat
Tensor latent_loss_cosine_grad(const LatentCode& z, const LatentCode& z_hat, std::span<const Real> weight);

/// mean((w - w_hat)^2) over layers x dim, per sample. PER_LAYER_W only.
std::vector<Real> latent_loss_mse(const LatentCode& w, const LatentCode& w_hat);
Tensor latent_loss_mse_grad(const LatentCode& w, const LatentCode& w_hat, std::span<const Real> weight);

/// Per-sample mean squared error over channels x pixels.
std::vector<Real> image_mse(const ImageBatch& x, const ImageBatch& y);

// ---------------------------------------------------------------------------
// Total loss

/// Batch-mean weighted loss components; `total` is their sum.
struct LossBreakdown {
    double total = 0;
    double mse = 0;
    double perceptual = 0;
    double latent = 0;
};

/// w1 * MSE(x, G(E(x_m, m))) + w2 * P(x, G(E(x_m, m))) + w3 * L_z(z, E(x_m, m)).
/// Reconstruction terms compare against the full image x; the mask only enters
/// through the encoder input. A component with weight 0 is skipped and reports
/// exactly 0. When `grads` is given, encoder parameter gradients of the
/// batch-mean total are accumulated into it.
LossBreakdown total_loss(const Encoder& e, const Generator& g, const ImageBatch& x, const LatentCode& z,
                         const Mask* m, std::vector<Tensor>* grads = nullptr,
                         const PerceptualDistance& perceptual = default_perceptual());

/// Same with explicit weights; `z` may be null when the latent weight is 0
/// (image-only objectives such as per-image finetuning).
LossBreakdown weighted_loss(const Encoder& e, const Generator& g, const ImageBatch& x, const LatentCode* z,
                            const Mask* m, const LossWeights& w, std::vector<Tensor>* grads = nullptr,
                            const PerceptualDistance& perceptual = default_perceptual());

}  // namespace LATCOMP_ABI
}  // namespace latcomp
