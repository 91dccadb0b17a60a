#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "latcomp/generators.hpp"
#include "latcomp/regressor.hpp"

namespace latcomp {
inline namespace LATCOMP_ABI {

struct CollageLayer {
    ImageBatch image;  // single sample
    Mask part_mask;    // single sample, same canvas
    int z_order = 0;
};

struct CollageSpec {
    ImageShape canvas;
    std::vector<CollageLayer> layers;

    void validate() const;
};

struct Collage {
    ImageBatch image;  // x_clg, zero outside the union
    Mask mask;         // union of the part masks
};

/// Paints layers in ascending z_order (ties keep list order); on overlaps the
/// higher layer wins.
Collage assemble_collage(const CollageSpec& spec);

/// CollageSpec JSON: {"canvas": [c, h, w], "layers": [{"image", "mask", "z_order"}]}.
/// Image/mask fields ending in ".png" are paths relative to `base_dir`,
/// anything else is base64 PNG (an optional data-URL prefix is accepted).
CollageSpec collage_spec_from_json(const Json& j, const fs::path& base_dir = {});
/// Embeds the layers as base64 PNG.
Json collage_spec_to_json(const CollageSpec& spec);

struct ComposeResult {
    Collage collage;
    LatentCode latent;    // raw encoder output, or the refined latent
    ImageBatch composite; // G(decoder_input(latent))
};

/// x_rec = G(E(x_clg, union)); a single forward pass.
ImageBatch compose(const Encoder& e, const Generator& g, const CollageSpec& spec);
ComposeResult compose_detailed(const Encoder& e, const Generator& g, const CollageSpec& spec);

// ---------------------------------------------------------------------------
// Latent refinement

struct RefineOptions {
    int steps = 0;
    Real lr = Real(0.02);
    Real mse_weight = 1;
    Real perceptual_weight = 1;
};

struct RefineResult {
    LatentCode latent;                  // best iterate per sample
    std::vector<double> objective;      // best objective per sample
    std::vector<double> initial_objective;
    std::vector<double> best_history;   // batch-summed best objective after each step
};

/// Per-sample masked objective: MSE over known pixels plus perceptual distance
/// between m ⊗ target and m ⊗ G(z).
std::vector<double> masked_objective(const Generator& g, const LatentCode& z, const ImageBatch& target,
                                     const Mask& m, const RefineOptions& opts = {});

/// Adam on the latent values, keeping the best iterate of every sample (a
/// step only replaces it on strict improvement). Throws OPTIMIZATION_DIVERGED
/// on a non-finite objective.
RefineResult refine_latent(const Generator& g, const LatentCode& z_init, const ImageBatch& target, const Mask& m,
                           const RefineOptions& opts);

enum class InitStrategy { Encoder, BestOfK };

/// Starting latent for refinement: the encoder's prediction, or the best of
/// k random samples under the masked objective.
LatentCode initial_latent(InitStrategy strategy, const Encoder* e, const Generator& g, const ImageBatch& target,
                          const Mask& m, int k, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Random collages

struct PartOrderPreset {
    std::string domain_name;
    std::vector<std::string> classes;  // back to front

    void validate() const;
};

/// church, living_room, car, face, oracle.
const PartOrderPreset& preset(const std::string& name);
std::vector<std::string> preset_names();

/// Supplies a part mask for one class of one source image.
class PartSource {
public:
    virtual ~PartSource() = default;
    virtual std::string name() const = 0;
    /// `z` is the source latent when known (null for pooled images).
    virtual Mask part_mask(const std::string& cls, const ImageBatch& image, const LatentCode* z, Rng& rng) const = 0;
};

/// Axis-aligned rectangles with side fractions drawn from [min_frac, max_frac].
class RectanglePartSource final : public PartSource {
public:
    explicit RectanglePartSource(Real min_frac = Real(0.25), Real max_frac = Real(0.6));
    std::string name() const override { return "rectangle"; }
    Mask part_mask(const std::string& cls, const ImageBatch& image, const LatentCode* z, Rng& rng) const override;

private:
    Real min_frac_, max_frac_;
};

/// Fixed user-supplied masks per class.
class UserMaskPartSource final : public PartSource {
public:
    explicit UserMaskPartSource(std::map<std::string, Mask> masks);
    std::string name() const override { return "user-mask"; }
    Mask part_mask(const std::string& cls, const ImageBatch& image, const LatentCode* z, Rng& rng) const override;

private:
    std::map<std::string, Mask> masks_;
};

/// Visible-part segmentation of procedural-oracle scenes.
class OraclePartSource final : public PartSource {
public:
    explicit OraclePartSource(std::shared_ptr<const ProceduralGenerator> g);
    std::string name() const override { return "oracle"; }
    Mask part_mask(const std::string& cls, const ImageBatch& image, const LatentCode* z, Rng& rng) const override;

private:
    std::shared_ptr<const ProceduralGenerator> g_;
};

struct RandomCollage {
    CollageSpec spec;
    std::vector<LatentCode> source_latents;  // one per layer (empty for pooled images)
};

/// One sampled G(z) per preset class, layered back to front.
RandomCollage random_collage(const Generator& g, const PartSource& source, const PartOrderPreset& preset,
                             std::uint64_t seed);
/// Same, drawing source images from a pool.
RandomCollage random_collage(std::span<const ImageBatch> pool, const PartSource& source,
                             const PartOrderPreset& preset, std::uint64_t seed);

}  // namespace LATCOMP_ABI
}  // namespace latcomp
