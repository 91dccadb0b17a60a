#include "latcomp/types.hpp"

#include <algorithm>
#include <cmath>

namespace latcomp {
inline namespace LATCOMP_ABI {

std::string latent_kind_name(LatentKind kind) {
    return kind == LatentKind::SphericalZ ? "SPHERICAL_Z" : "PER_LAYER_W";
}

LatentKind parse_latent_kind(const std::string& name) {
    if (name == "SPHERICAL_Z") return LatentKind::SphericalZ;
    if (name == "PER_LAYER_W") return LatentKind::PerLayerW;
    fail(ErrorCode::InvalidArgument, "unknown latent kind '" + name + "'");
}

void LatentSpec::validate() const {
    require(dim >= 1 && num_layers >= 1, ErrorCode::SpecMismatch, "latent spec needs dim >= 1 and num_layers >= 1");
    require(kind != LatentKind::SphericalZ || num_layers == 1, ErrorCode::SpecMismatch,
            "SPHERICAL_Z latents have exactly one layer");
}

std::string LatentSpec::summary() const {
    return latent_kind_name(kind) + " dim=" + std::to_string(dim) + " layers=" + std::to_string(num_layers);
}

LatentCode::LatentCode(LatentSpec s, Tensor v) : spec(s), values(std::move(v)) {
    spec.validate();
    require(values.rank() == 3 && values.dim(1) == spec.num_layers && values.dim(2) == spec.dim,
            ErrorCode::SpecMismatch, "latent values " + shape_str(values.shape()) + " do not match " + spec.summary());
    require(values.all_finite(), ErrorCode::NumericalFailure, "latent code has non-finite entries");
}

LatentCode LatentCode::zeros(const LatentSpec& s, int batch) {
    return LatentCode(s, Tensor({batch, s.num_layers, s.dim}));
}

ImageBatch::ImageBatch(Tensor v) : values(std::move(v)) {
    require(values.rank() == 4, ErrorCode::ShapeMismatch, "images must be [N, C, H, W], got " + shape_str(values.shape()));
    for (Real x : values.values()) {
        require(x >= Real(-1) && x <= Real(1), ErrorCode::InvalidArgument,
                "image value " + std::to_string(x) + " outside [-1, 1]");
    }
}

Mask::Mask(Tensor v) : values(std::move(v)) {
    require(values.rank() == 4 && values.dim(1) == 1, ErrorCode::ShapeMismatch,
            "masks must be [N, 1, H, W], got " + shape_str(values.shape()));
    for (Real x : values.values()) {
        require(x == Real(0) || x == Real(1), ErrorCode::InvalidArgument, "mask entries must be 0 or 1");
    }
}

Mask Mask::ones(int batch, int height, int width) { return Mask(Tensor({batch, 1, height, width}, Real(1))); }
Mask Mask::zeros(int batch, int height, int width) { return Mask(Tensor({batch, 1, height, width}, Real(0))); }

std::size_t Mask::count_ones() const {
    return static_cast<std::size_t>(std::count(values.storage().begin(), values.storage().end(), Real(1)));
}

Mask Mask::repeat(int n) const {
    require(batch() == 1, ErrorCode::ShapeMismatch, "repeat expects a single-sample mask");
    std::vector<Tensor> parts(static_cast<std::size_t>(n), values);
    return Mask(concat_batch(parts));
}

ImageBatch concat(std::span<const ImageBatch> parts) {
    std::vector<Tensor> t;
    for (const auto& p : parts) t.push_back(p.values);
    ImageBatch out;
    out.values = concat_batch(t);
    return out;
}

Mask concat(std::span<const Mask> parts) {
    std::vector<Tensor> t;
    for (const auto& p : parts) t.push_back(p.values);
    Mask out;
    out.values = concat_batch(t);
    return out;
}

LatentCode concat(std::span<const LatentCode> parts) {
    require(!parts.empty(), ErrorCode::EmptyInput, "concat of no latent codes");
    std::vector<Tensor> t;
    for (const auto& p : parts) {
        require(p.spec == parts.front().spec, ErrorCode::SpecMismatch, "concat of latents with different specs");
        t.push_back(p.values);
    }
    return LatentCode(parts.front().spec, concat_batch(t));
}

Tensor clamp_unit(Tensor t) {
    for (Real& v : t.values()) v = std::clamp(v, Real(-1), Real(1));
    return t;
}

}  // namespace LATCOMP_ABI
}  // namespace latcomp
