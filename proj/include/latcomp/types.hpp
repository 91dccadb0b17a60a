#pragma once

#include <string>

#include "latcomp/tensor.hpp"

namespace latcomp {
inline namespace LATCOMP_ABI {

enum class LatentKind { SphericalZ, PerLayerW };

std::string latent_kind_name(LatentKind kind);
LatentKind parse_latent_kind(const std::string& name);

/// Shape of a generator input: a unit-sphere vector (ProGAN-style z) or one
/// style vector per synthesis layer (StyleGAN-style W+).
struct LatentSpec {
    LatentKind kind = LatentKind::SphericalZ;
    int dim = 1;
    int num_layers = 1;

    static LatentSpec spherical(int dim) { return {LatentKind::SphericalZ, dim, 1}; }
    static LatentSpec per_layer(int dim, int layers) { return {LatentKind::PerLayerW, dim, layers}; }

    int size() const { return dim * num_layers; }
    void validate() const;
    std::string summary() const;

    friend bool operator==(const LatentSpec&, const LatentSpec&) = default;
};

/// values: [batch, num_layers, dim].
struct LatentCode {
    LatentSpec spec;
    Tensor values;

    LatentCode() = default;
    LatentCode(LatentSpec s, Tensor v);
    /// Zero-filled code for `batch` samples.
    static LatentCode zeros(const LatentSpec& s, int batch);

    int batch() const { return values.dim(0); }
    LatentCode slice(int begin, int end) const { return {spec, values.slice(begin, end)}; }
};

/// [batch, channels, height, width] with every entry in [-1, 1].
struct ImageBatch {
    Tensor values;

    ImageBatch() = default;
    explicit ImageBatch(Tensor v);

    int batch() const { return values.dim(0); }
    int channels() const { return values.dim(1); }
    int height() const { return values.dim(2); }
    int width() const { return values.dim(3); }
    ImageBatch slice(int begin, int end) const { return ImageBatch(values.slice(begin, end)); }
};

/// [batch, 1, height, width] with entries exactly 0 or 1. 1 marks a known pixel.
struct Mask {
    Tensor values;

    Mask() = default;
    explicit Mask(Tensor v);
    static Mask ones(int batch, int height, int width);
    static Mask zeros(int batch, int height, int width);

    int batch() const { return values.dim(0); }
    int height() const { return values.dim(2); }
    int width() const { return values.dim(3); }
    std::size_t count_ones() const;
    Mask slice(int begin, int end) const { return Mask(values.slice(begin, end)); }
    /// Replicates a single-sample mask `n` times.
    Mask repeat(int n) const;

    friend bool operator==(const Mask& a, const Mask& b) { return a.values == b.values; }
};

ImageBatch concat(std::span<const ImageBatch> parts);
Mask concat(std::span<const Mask> parts);
LatentCode concat(std::span<const LatentCode> parts);

/// Clamps into [-1, 1]; used at I/O boundaries where arithmetic may drift.
Tensor clamp_unit(Tensor t);

}  // namespace LATCOMP_ABI
}  // namespace latcomp
