#include "latcomp/masking.hpp"

#include <algorithm>
#include <random>

namespace latcomp {
inline namespace LATCOMP_ABI {

void MaskSamplerOptions::validate() const {
    require(patch_size >= 2, ErrorCode::InvalidArgument, "mask patch_size must be >= 2");
    require(Real(0) <= threshold_lo && threshold_lo < threshold_hi && threshold_hi <= Real(1),
            ErrorCode::InvalidArgument, "mask threshold range must satisfy 0 <= lo < hi <= 1");
    if (fixed_threshold)
        require(*fixed_threshold >= 0 && *fixed_threshold <= 1, ErrorCode::InvalidArgument,
                "fixed mask threshold must be in [0, 1]");
}

Tensor upsample_bilinear(const Tensor& grid, int height, int width) {
    require(grid.rank() == 2 && grid.dim(0) >= 2 && grid.dim(1) >= 2, ErrorCode::ShapeMismatch,
            "upsample_bilinear expects a [p, q] grid with p, q >= 2");
    require(height >= 2 && width >= 2, ErrorCode::ShapeMismatch, "upsample target must be at least 2x2");
    const int P = grid.dim(0), Q = grid.dim(1);
    Tensor out({height, width});
    for (int y = 0; y < height; ++y) {
        const double gy = double(y) * (P - 1) / (height - 1);
        const int y0 = std::min(static_cast<int>(gy), P - 2);
        const double fy = gy - y0;
        for (int x = 0; x < width; ++x) {
            const double gx = double(x) * (Q - 1) / (width - 1);
            const int x0 = std::min(static_cast<int>(gx), Q - 2);
            const double fx = gx - x0;
            const double v00 = grid[static_cast<std::size_t>(y0) * Q + x0];
            const double v01 = grid[static_cast<std::size_t>(y0) * Q + x0 + 1];
            const double v10 = grid[static_cast<std::size_t>(y0 + 1) * Q + x0];
            const double v11 = grid[static_cast<std::size_t>(y0 + 1) * Q + x0 + 1];
            out[static_cast<std::size_t>(y) * width + x] =
                static_cast<Real>((1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11));
        }
    }
    return out;
}

Mask threshold_field(const Tensor& field, Real t) {
    require(field.rank() == 2, ErrorCode::ShapeMismatch, "threshold_field expects [H, W]");
    Tensor m({1, 1, field.dim(0), field.dim(1)});
    for (std::size_t i = 0; i < field.size(); ++i) m[i] = field[i] > t ? Real(1) : Real(0);
    return Mask(std::move(m));
}

Mask sample_mask(int height, int width, int batch, const MaskSamplerOptions& opts, Rng& rng) {
    opts.validate();
    require(batch >= 1, ErrorCode::InvalidArgument, "sample_mask needs batch >= 1");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> thresh(opts.threshold_lo, opts.threshold_hi);
    Tensor out({batch, 1, height, width});
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    for (int n = 0; n < batch; ++n) {
        Tensor grid({opts.patch_size, opts.patch_size});
        for (Real& v : grid.values()) {
            // Uniform on the open interval (0, 1) so a zero threshold keeps every pixel.
            double u = unit(rng);
            while (u <= 0.0) u = unit(rng);
            v = static_cast<Real>(u);
        }
        const double drawn = thresh(rng);
        const Real t = opts.fixed_threshold ? *opts.fixed_threshold : static_cast<Real>(drawn);
        const Mask m = threshold_field(upsample_bilinear(grid, height, width), t);
        std::copy_n(m.values.data(), plane, out.sample(n));
    }
    return Mask(std::move(out));
}

Mask sample_mask(int height, int width, int batch, const MaskSamplerOptions& opts, std::uint64_t seed) {
    Rng rng = substream(seed, "mask");
    return sample_mask(height, width, batch, opts, rng);
}

ImageBatch apply_mask(const ImageBatch& x, const Mask& m) {
    require(x.batch() == m.batch() && x.height() == m.height() && x.width() == m.width(), ErrorCode::ShapeMismatch,
            "apply_mask: image " + shape_str(x.values.shape()) + " vs mask " + shape_str(m.values.shape()));
    ImageBatch out = x;
    const std::size_t plane = static_cast<std::size_t>(x.height()) * x.width();
    for (int n = 0; n < x.batch(); ++n) {
        const Real* mv = m.values.sample(n);
        Real* xv = out.values.sample(n);
        for (int c = 0; c < x.channels(); ++c)
            for (std::size_t i = 0; i < plane; ++i)
                if (mv[i] == Real(0)) xv[c * plane + i] = Real(0);
    }
    return out;
}

Mask union_masks(std::span<const Mask> masks) {
    require(!masks.empty(), ErrorCode::EmptyInput, "union_masks of an empty list");
    Mask out = masks.front();
    for (const Mask& m : masks.subspan(1)) {
        require_same_shape(out.values, m.values, "union_masks");
        for (std::size_t i = 0; i < m.values.size(); ++i) out.values[i] = std::max(out.values[i], m.values[i]);
    }
    return out;
}

Mask invert_mask(const Mask& m) {
    Mask out = m;
    for (Real& v : out.values.values()) v = Real(1) - v;
    return out;
}

}  // namespace LATCOMP_ABI
}  // namespace latcomp
