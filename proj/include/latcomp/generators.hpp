#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "latcomp/io.hpp"
#include "latcomp/nn.hpp"
#include "latcomp/types.hpp"

namespace latcomp {
inline namespace LATCOMP_ABI {

enum class GeneratorKind { ToyAdversarial, ProceduralOracle, Imported };

std::string generator_kind_name(GeneratorKind kind);

struct ImageShape {
    int channels = 3;
    int height = 64;
    int width = 64;
    friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

/// Output of a differentiable evaluation: the images plus the vector-Jacobian
/// product back to the latent values ([N, L, D]).
struct GeneratorTrace {
    ImageBatch image;
    std::function<Tensor(const Tensor& grad_image)> pullback;
};

/// A frozen image generator G: z -> x. Implementations are immutable after
/// construction and safe to call from several threads.
class Generator {
public:
    virtual ~Generator() = default;

    virtual GeneratorKind kind() const = 0;
    virtual const LatentSpec& latent_spec() const = 0;
    virtual ImageShape output_shape() const = 0;

    virtual ImageBatch generate(const LatentCode& z) const { return trace(z).image; }
    virtual GeneratorTrace trace(const LatentCode& z) const = 0;

    /// Hash over all weights; the frozen-generator contract is checked with it.
    virtual std::uint64_t checksum() const = 0;
    virtual Checkpoint to_checkpoint() const = 0;
};

using GeneratorHandle = std::shared_ptr<const Generator>;

/// Draws `count` latents. SPHERICAL_Z samples are projected onto the unit sphere.
LatentCode sample_latent(const LatentSpec& spec, int count, std::uint64_t seed);
LatentCode sample_latent(const LatentSpec& spec, int count, Rng& rng);

/// Scales every SPHERICAL_Z sample to unit L2 norm.
LatentCode normalize_latent(const LatentCode& z);
/// Backward of normalize_latent: given y = z/|z| and dL/dy, returns dL/dz.
Tensor normalize_latent_backward(const LatentCode& z, const Tensor& grad_normalized);

/// G(z) with the spec check.
ImageBatch generate(const Generator& g, const LatentCode& z);

/// What a consumer feeds the generator for an encoder output: SPHERICAL_Z
/// codes are normalised first, W+ codes pass through.
LatentCode decoder_input(const LatentCode& code);

// ---------------------------------------------------------------------------
// Procedural oracle

/// Latent coordinate blocks of the procedural scene (flattened [L * D] index).
struct SceneBlocks {
    static constexpr int kBackgroundBegin = 0;   // top rgb, bottom rgb, horizon
    static constexpr int kBuildingBegin = 7;     // cx, cy, half-width, half-height, rgb
    static constexpr int kTreeBegin = 14;        // cx, cy, radius, rgb
    static constexpr int kUsed = 20;
};

/// Scene parameters decoded from one latent sample, in normalised image
/// coordinates ([0, 1] across width / height).
struct SceneParams {
    Real sky[3], ground[3], horizon;
    Real building_cx, building_cy, building_hw, building_hh, building_rgb[3];
    Real tree_cx, tree_cy, tree_r, tree_rgb[3];
};

/// Deterministic, differentiable renderer of a three-part scene (background
/// gradient, building rectangle, tree disc). Each part is driven by a disjoint
/// coordinate block of z (see SceneBlocks); part edges have compact support so
/// a block perturbation only touches pixels near that part.
class ProceduralGenerator final : public Generator {
public:
    /// Part identifiers used by part sources and probes.
    static inline const std::vector<std::string> kParts = {"background", "building", "tree"};

    ProceduralGenerator(LatentSpec spec, ImageShape shape, std::uint64_t seed);
    /// Rebuild from stored weights.
    ProceduralGenerator(LatentSpec spec, ImageShape shape, std::uint64_t seed, Tensor base, Tensor gain);

    GeneratorKind kind() const override { return GeneratorKind::ProceduralOracle; }
    const LatentSpec& latent_spec() const override { return spec_; }
    ImageShape output_shape() const override { return shape_; }
    GeneratorTrace trace(const LatentCode& z) const override;
    std::uint64_t checksum() const override;
    Checkpoint to_checkpoint() const override;

    SceneParams scene(const LatentCode& z, int index) const;
    /// Raw per-pixel coverage of one part in [0, 1] ([N, 1, H, W]).
    Tensor part_alpha(const LatentCode& z, const std::string& part) const;
    /// Visible-part segmentation: pixels where `part` is the top layer.
    Mask part_mask(const LatentCode& z, const std::string& part) const;
    /// Pixels a perturbation of `part`'s block can touch for this scene, given a
    /// bound on how far the part's geometry may move (normalised units).
    Mask part_support(const LatentCode& z, const std::string& part, Real slack) const;

    /// Edge ramp width in pixels.
    static constexpr Real kEdgePixels = Real(1.5);
    const Tensor& base() const { return base_; }
    const Tensor& gain() const { return gain_; }
    std::uint64_t seed() const { return seed_; }
    /// Multiplier that gives unit-sphere SPHERICAL_Z coordinates unit variance.
    Real coordinate_scale() const;

private:
    ImageBatch render(const std::vector<SceneParams>& scenes) const;

    LatentSpec spec_;
    ImageShape shape_;
    std::uint64_t seed_;
    Tensor base_;  // [kUsed] offsets applied before the squashing nonlinearities
    Tensor gain_;  // [kUsed]
};

std::shared_ptr<const ProceduralGenerator> build_procedural_generator(const LatentSpec& spec, ImageShape shape,
                                                                      std::uint64_t seed);

/// Smooth, compactly supported 0->1 step (quintic smootherstep of clamp(t)).
Real smoother_step(Real t);
Real smoother_step_derivative(Real t);

// ---------------------------------------------------------------------------
// Toy adversarial generator

struct ToyGeneratorConfig {
    LatentSpec latent = LatentSpec::spherical(32);
    int resolution = 32;  // 32 or 64
    int base_channels = 32;
    int steps = 2000;
    int batch_size = 16;
    Real learning_rate = Real(2e-4);
    Real beta1 = Real(0.5);
    std::uint64_t seed = 0;
};

/// DCGAN-style stack of transposed convolutions with tanh output. SPHERICAL_Z
/// inputs pass through a pixel-norm layer first.
class ToyGenerator final : public Generator {
public:
    ToyGenerator(const ToyGeneratorConfig& config, nn::Sequential net);

    GeneratorKind kind() const override { return GeneratorKind::ToyAdversarial; }
    const LatentSpec& latent_spec() const override { return config_.latent; }
    ImageShape output_shape() const override { return {3, config_.resolution, config_.resolution}; }
    GeneratorTrace trace(const LatentCode& z) const override;
    std::uint64_t checksum() const override { return net_.checksum(); }
    Checkpoint to_checkpoint() const override;

    const ToyGeneratorConfig& config() const { return config_; }
    const nn::Sequential& network() const { return net_; }

private:
    ToyGeneratorConfig config_;
    nn::Sequential net_;
};

nn::Sequential build_toy_generator_net(const ToyGeneratorConfig& config);
nn::Sequential build_toy_discriminator_net(const ToyGeneratorConfig& config);

/// Batch source for generator training: (batch size, step) -> images.
using ImageStream = std::function<ImageBatch(int batch, std::int64_t step)>;

/// Random axis-aligned coloured rectangles on flat backgrounds.
ImageStream rectangles_dataset(int resolution, std::uint64_t seed);

struct GanStepLosses {
    std::int64_t step;
    double discriminator;
    double generator;
};

struct ToyTrainResult {
    std::shared_ptr<const ToyGenerator> generator;
    std::vector<GanStepLosses> history;
};

/// Non-saturating GAN training. Throws TRAINING_DIVERGED on a NaN loss.
ToyTrainResult train_toy_generator(const ImageStream& dataset, const ToyGeneratorConfig& config);

// ---------------------------------------------------------------------------
// Checkpoints

void save_generator(const Generator& g, const fs::path& dir);
GeneratorHandle load_generator(const fs::path& dir);

Json latent_spec_to_json(const LatentSpec& spec);
LatentSpec latent_spec_from_json(const Json& j);

}  // namespace LATCOMP_ABI
}  // namespace latcomp
