#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "latcomp/generators.hpp"
#include "latcomp/regressor.hpp"

namespace latcomp {
inline namespace LATCOMP_ABI {

/// Masked L1 of one output against the context region, the target region and
/// the whole collage.
struct RegionDistances {
    double to_context = 0;
    double to_target = 0;
    double to_collage = 0;
};

struct BlendResult {
    ImageBatch collage;       // m1 ⊗ x1 + m2 ⊗ x2
    Mask union_mask;
    ImageBatch composition;   // G(E(collage, m1 ∪ m2))
    ImageBatch latent_blend;  // G(α E(x1) + (1 - α) E(x2))
    ImageBatch pixel_blend;   // G(E(α x1 + (1 - α) x2))
    Real alpha = 0;
    RegionDistances composition_distances, latent_distances, pixel_distances;
};

/// 1 - ones(m) / pixels: the context weight grows as the target shrinks.
Real alpha_from_area(const Mask& m_target);

/// x1 is the context, x2 the target, m2 the target-modification region.
/// Throws OVERLAPPING_REGIONS when m1 and m2 share a pixel.
BlendResult blend_compare(const Encoder& e, const Generator& g, const ImageBatch& x1, const ImageBatch& x2,
                          const Mask& m1, const Mask& m2, std::optional<Real> alpha = std::nullopt);
/// m1 defaults to the complement of m2.
BlendResult blend_compare(const Encoder& e, const Generator& g, const ImageBatch& x1, const ImageBatch& x2,
                          const Mask& m2, std::optional<Real> alpha = std::nullopt);

/// Encoder output for an unmasked image (all-ones mask channel when needed).
LatentCode encode_full(const Encoder& e, const ImageBatch& x);

// ---------------------------------------------------------------------------

struct PartRegion {
    std::string component_id;
    Mask mask;  // single sample
};

struct IndependenceReport {
    std::string component_id;
    Tensor sigma_map;      // [C, H, W], averaged over repeats
    Tensor variation_map;  // [C, H, W], averaged over repeats
    double score = 0;      // s_c, averaged over repeats
    int n_replacements = 0;
    int n_repeats = 0;
};

struct IndependenceOptions {
    int n_replacements = 20;
    int repeats = 100;
    std::uint64_t seed = 0;
    /// Baseline: the replacement image is swapped in whole instead of only
    /// inside m_c; m_c still selects the "outside" region of the score.
    bool full_swap = false;
};

/// Pixelwise population std over the sample axis of [N, C, H, W] -> [C, H, W].
Tensor pixel_std(const Tensor& samples);

/// v_c = σ_c / Σ_c σ_c (0 where the sum is 0).
std::vector<Tensor> variation_maps(const std::vector<Tensor>& sigma);

/// Mean of (1 - m_c) ⊗ v_c over channels and the pixels where Σ_c σ_c > 0.
double independence_score(const Tensor& variation, const Mask& m_c, const Tensor& sigma_sum);

/// Resamples each part with random G(z) content, re-projects through E and G
/// (full-ones encoder mask) and measures how much the variation leaks outside
/// the part.
std::vector<IndependenceReport> part_independence(const Encoder& e, const Generator& g, const ImageBatch& x,
                                                  const std::vector<PartRegion>& parts,
                                                  const IndependenceOptions& opts = {});

// ---------------------------------------------------------------------------

/// E(x1_modified) - E(x1) + E(x2), layer by layer.
LatentCode edit_latent(const Encoder& e, const ImageBatch& x1, const ImageBatch& x1_modified, const ImageBatch& x2);
/// G(decoder_input(edit_latent(...))).
ImageBatch edit_vector_transfer(const Encoder& e, const Generator& g, const ImageBatch& x1,
                                const ImageBatch& x1_modified, const ImageBatch& x2);

struct FinetuneOptions {
    int steps = 30;
    Real lr = Real(1e-3);
    LossWeights weights{1, 1, 0};
};

struct FinetuneResult {
    Encoder encoder;  // the tuned copy (best iterate)
    double initial_l1 = 0;
    double final_l1 = 0;
};

/// Specialises a copy of E to one image by minimising its full-mask
/// reconstruction loss. Keeps the iterate with the lowest reconstruction L1.
FinetuneResult finetune_encoder(const Encoder& e, const Generator& g, const ImageBatch& x,
                                const FinetuneOptions& opts = {});

}  // namespace LATCOMP_ABI
}  // namespace latcomp
