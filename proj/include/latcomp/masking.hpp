#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "latcomp/types.hpp"

namespace latcomp {
inline namespace LATCOMP_ABI {

/// Training-mask sampler: uniform noise on a coarse grid, bilinearly upsampled
/// and thresholded. m = 1[upsampled > t], t ~ U(lo, hi).
struct MaskSamplerOptions {
    int patch_size = 6;
    Real threshold_lo = Real(0.3);
    Real threshold_hi = Real(1.0);
    /// Replaces the threshold draw (degenerate-threshold checks).
    std::optional<Real> fixed_threshold;

    void validate() const;
};

/// Align-corners bilinear upsampling of a [p, p] grid to [height, width]: the
/// grid's corner samples land exactly on the image's corner pixels.
Tensor upsample_bilinear(const Tensor& grid, int height, int width);

/// 1[values > t] for a [H, W] field, as a single-sample mask. Ties map to 0.
Mask threshold_field(const Tensor& field, Real t);

Mask sample_mask(int height, int width, int batch, const MaskSamplerOptions& opts, Rng& rng);
Mask sample_mask(int height, int width, int batch, const MaskSamplerOptions& opts, std::uint64_t seed);

/// x ⊗ m, broadcast over channels. Masked-out pixels become exactly 0.
ImageBatch apply_mask(const ImageBatch& x, const Mask& m);
/// Elementwise OR.
Mask union_masks(std::span<const Mask> masks);
/// 1 - m.
Mask invert_mask(const Mask& m);

}  // namespace LATCOMP_ABI
}  // namespace latcomp
