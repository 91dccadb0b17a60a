#include "latcomp/composition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "latcomp/masking.hpp"

namespace latcomp {
inline namespace LATCOMP_ABI {

void CollageSpec::validate() const {
    require(!layers.empty(), ErrorCode::InvalidArgument, "collage spec has no layers");
    require(canvas.channels == 3 && canvas.height > 0 && canvas.width > 0, ErrorCode::InvalidArgument,
            "collage canvas must be [3, h, w]");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const CollageLayer& l = layers[i];
        const std::string where = "collage layer " + std::to_string(i);
        require(l.image.values.rank() == 4 && l.image.batch() == 1 && l.image.channels() == canvas.channels &&
                    l.image.height() == canvas.height && l.image.width() == canvas.width,
                ErrorCode::ShapeMismatch, where + ": image " + shape_str(l.image.values.shape()) + " does not fit the canvas");
        require(l.part_mask.values.rank() == 4 && l.part_mask.batch() == 1 && l.part_mask.height() == canvas.height &&
                    l.part_mask.width() == canvas.width,
                ErrorCode::ShapeMismatch, where + ": mask " + shape_str(l.part_mask.values.shape()) + " does not fit the canvas");
    }
}

Collage assemble_collage(const CollageSpec& spec) {
    spec.validate();
    std::vector<std::size_t> order(spec.layers.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return spec.layers[a].z_order < spec.layers[b].z_order; });
    const int C = spec.canvas.channels;
    const std::size_t P = static_cast<std::size_t>(spec.canvas.height) * spec.canvas.width;
    Collage out;
    out.image.values = Tensor({1, C, spec.canvas.height, spec.canvas.width});
    out.mask = Mask::zeros(1, spec.canvas.height, spec.canvas.width);
    Real* dst = out.image.values.data();
    Real* um = out.mask.values.data();
    for (std::size_t idx : order) {
        const CollageLayer& l = spec.layers[idx];
        const Real* src = l.image.values.data();
        const Real* m = l.part_mask.values.data();
        for (std::size_t p = 0; p < P; ++p) {
            if (m[p] == 0) continue;
            um[p] = 1;
            for (int c = 0; c < C; ++c) dst[c * P + p] = src[c * P + p];
        }
    }
    return out;
}

namespace {

std::vector<std::uint8_t> field_bytes(const Json& field, const fs::path& base_dir, const std::string& where) {
    require(field.is_string(), ErrorCode::InvalidArgument, where + " must be a string");
    std::string s = field.get<std::string>();
    std::string lower = s;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower.size() > 4 && lower.ends_with(".png")) {
        const fs::path p = fs::path(s).is_absolute() ? fs::path(s) : base_dir / s;
        const std::string text = read_text_file(p);
        return {text.begin(), text.end()};
    }
    if (const auto comma = s.find(','); s.starts_with("data:") && comma != std::string::npos) s = s.substr(comma + 1);
    return base64_decode(s);
}

}  // namespace

CollageSpec collage_spec_from_json(const Json& j, const fs::path& base_dir) {
    try {
        require(j.is_object(), ErrorCode::InvalidArgument, "collage spec must be a JSON object");
        CollageSpec spec;
        const auto canvas = j.at("canvas").get<std::vector<int>>();
        require(canvas.size() == 3, ErrorCode::InvalidArgument, "canvas must be [c, h, w]");
        spec.canvas = {canvas[0], canvas[1], canvas[2]};
        const Json& layers = j.at("layers");
        require(layers.is_array(), ErrorCode::InvalidArgument, "layers must be an array");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const Json& l = layers[i];
            const std::string where = "layers[" + std::to_string(i) + "]";
            CollageLayer layer;
            layer.image = decode_png_image(field_bytes(l.at("image"), base_dir, where + ".image"));
            layer.part_mask = decode_png_mask(field_bytes(l.at("mask"), base_dir, where + ".mask"));
            layer.z_order = l.value("z_order", static_cast<int>(i));
            spec.layers.push_back(std::move(layer));
        }
        spec.validate();
        return spec;
    } catch (const Json::exception& e) {
        fail(ErrorCode::InvalidArgument, std::string("malformed collage spec: ") + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ShapeMismatch || e.code() == ErrorCode::IoError)
            fail(ErrorCode::InvalidArgument, std::string("malformed collage spec: ") + e.what());
        throw;
    }
}

Json collage_spec_to_json(const CollageSpec& spec) {
    Json layers = Json::array();
    for (const CollageLayer& l : spec.layers)
        layers.push_back({{"image", base64_encode(encode_png_rgb(l.image))},
                          {"mask", base64_encode(encode_png_mask(l.part_mask))},
                          {"z_order", l.z_order}});
    return {{"canvas", {spec.canvas.channels, spec.canvas.height, spec.canvas.width}}, {"layers", layers}};
}

ComposeResult compose_detailed(const Encoder& e, const Generator& g, const CollageSpec& spec) {
    require(e.config().input_channels == 4, ErrorCode::SpecMismatch, "composition needs a mask-aware encoder");
    require(e.config().latent_spec == g.latent_spec(), ErrorCode::SpecMismatch,
            "encoder/generator latent spec mismatch: " + e.config().latent_spec.summary() + " vs " +
                g.latent_spec().summary());
    ComposeResult r;
    r.collage = assemble_collage(spec);
    r.latent = e.encode(r.collage.image, &r.collage.mask);
    r.composite = generate(g, decoder_input(r.latent));
    return r;
}

ImageBatch compose(const Encoder& e, const Generator& g, const CollageSpec& spec) {
    return compose_detailed(e, g, spec).composite;
}

// ---------------------------------------------------------------------------

namespace {

struct ObjectiveTrace {
    std::vector<double> value;
    Tensor grad;  // w.r.t. raw latent values; empty when not requested
};

ObjectiveTrace objective_trace(const Generator& g, const LatentCode& z, const ImageBatch& target, const Mask& m,
                               const RefineOptions& opts, bool want_grad) {
    const LatentCode zin = decoder_input(z);
    GeneratorTrace gt = g.trace(zin);
    const ImageBatch& y = gt.image;
    require_same_shape(y.values, target.values, "refine target");
    const int N = y.batch(), C = y.channels();
    const std::size_t P = static_cast<std::size_t>(y.height()) * y.width();
    ObjectiveTrace out;
    out.value.assign(static_cast<std::size_t>(N), 0.0);
    Tensor grad_y(y.values.shape());
    for (int n = 0; n < N; ++n) {
        const Real* mv = m.values.sample(n);
        double area = 0;
        for (std::size_t p = 0; p < P; ++p) area += mv[p];
        require(area > 0, ErrorCode::EmptyMask, "refinement mask is empty");
        const double denom = area * C;
        const Real* a = y.values.sample(n);
        const Real* b = target.values.sample(n);
        Real* gv = grad_y.sample(n);
        double s = 0;
        for (int c = 0; c < C; ++c)
            for (std::size_t p = 0; p < P; ++p) {
                const std::size_t i = c * P + p;
                const double d = mv[p] * (double(a[i]) - double(b[i]));
                s += d * d;
                gv[i] = static_cast<Real>(opts.mse_weight * 2 * d * mv[p] / denom);
            }
        out.value[static_cast<std::size_t>(n)] = opts.mse_weight * s / denom;
    }
    if (opts.perceptual_weight > 0) {
        const ImageBatch tm = apply_mask(target, m);
        const ImageBatch ym = apply_mask(y, m);
        const PerceptualTrace pt = default_perceptual().trace(tm, ym);
        for (int n = 0; n < N; ++n) out.value[std::size_t(n)] += opts.perceptual_weight * pt.distance[std::size_t(n)];
        if (want_grad) {
            std::vector<Real> w(static_cast<std::size_t>(N), opts.perceptual_weight);
            const Tensor gp = pt.pullback(w);
            // d(m ⊗ y)/dy = m
            for (int n = 0; n < N; ++n) {
                const Real* mv = m.values.sample(n);
                const Real* gs = gp.sample(n);
                Real* gv = grad_y.sample(n);
                for (int c = 0; c < C; ++c)
                    for (std::size_t p = 0; p < P; ++p) gv[c * P + p] += mv[p] * gs[c * P + p];
            }
        }
    }
    if (want_grad) {
        const Tensor gz = gt.pullback(grad_y);
        out.grad = z.spec.kind == LatentKind::SphericalZ ? normalize_latent_backward(z, gz) : gz;
    }
    return out;
}

}  // namespace

std::vector<double> masked_objective(const Generator& g, const LatentCode& z, const ImageBatch& target,
                                     const Mask& m, const RefineOptions& opts) {
    return objective_trace(g, z, target, m, opts, false).value;
}

RefineResult refine_latent(const Generator& g, const LatentCode& z_init, const ImageBatch& target, const Mask& m,
                           const RefineOptions& opts) {
    require(opts.steps >= 0, ErrorCode::InvalidArgument, "refine steps must be >= 0");
    require(z_init.spec == g.latent_spec(), ErrorCode::SpecMismatch,
            "refine: latent " + z_init.spec.summary() + " vs generator " + g.latent_spec().summary());
    require(z_init.batch() == target.batch() && m.batch() == target.batch(), ErrorCode::ShapeMismatch,
            "refine: latent, target and mask batch sizes differ");
    RefineResult r;
    r.latent = z_init;
    ObjectiveTrace cur = objective_trace(g, z_init, target, m, opts, opts.steps > 0);
    for (double v : cur.value)
        require(std::isfinite(v), ErrorCode::OptimizationDiverged, "non-finite objective at the initial latent");
    r.initial_objective = cur.value;
    r.objective = cur.value;
    if (opts.steps == 0) return r;

    LatentCode z = z_init;
    Tensor* param = &z.values;
    nn::Adam adam({param}, nn::Adam::Options{.lr = opts.lr});
    const int N = z.batch();
    const std::size_t D = z.values.sample_size();
    for (int step = 1; step <= opts.steps; ++step) {
        require(cur.grad.all_finite(), ErrorCode::OptimizationDiverged,
                "non-finite gradient at refinement step " + std::to_string(step));
        adam.step({param}, std::span<const Tensor>(&cur.grad, 1));
        const bool last = step == opts.steps;
        cur = objective_trace(g, z, target, m, opts, !last);
        double total = 0;
        for (int n = 0; n < N; ++n) {
            const double v = cur.value[std::size_t(n)];
            require(std::isfinite(v), ErrorCode::OptimizationDiverged,
                    "non-finite objective at refinement step " + std::to_string(step));
            if (v < r.objective[std::size_t(n)]) {
                r.objective[std::size_t(n)] = v;
                std::copy_n(z.values.sample(n), D, r.latent.values.sample(n));
            }
            total += r.objective[std::size_t(n)];
        }
        r.best_history.push_back(total);
    }
    return r;
}

LatentCode initial_latent(InitStrategy strategy, const Encoder* e, const Generator& g, const ImageBatch& target,
                          const Mask& m, int k, std::uint64_t seed) {
    if (strategy == InitStrategy::Encoder) {
        require(e != nullptr, ErrorCode::InvalidArgument, "encoder initialisation without an encoder");
        return encode_masked(*e, target, m);
    }
    require(k >= 1, ErrorCode::InvalidArgument, "best-of-k needs k >= 1");
    const int N = target.batch();
    LatentCode best = LatentCode::zeros(g.latent_spec(), N);
    const std::size_t D = best.values.sample_size();
    for (int n = 0; n < N; ++n) {
        Rng rng = substream(seed, "best-of-k", std::uint64_t(n));
        const LatentCode cand = sample_latent(g.latent_spec(), k, rng);
        const ImageBatch t = target.slice(n, n + 1);
        const Mask mn = m.slice(n, n + 1);
        const std::vector<double> v = masked_objective(g, cand, concat(std::vector<ImageBatch>(k, t)), mn.repeat(k));
        const auto it = std::min_element(v.begin(), v.end());
        const int idx = static_cast<int>(it - v.begin());
        std::copy_n(cand.values.sample(idx), D, best.values.sample(n));
    }
    return best;
}

// ---------------------------------------------------------------------------

void PartOrderPreset::validate() const {
    require(!classes.empty(), ErrorCode::InvalidArgument, "preset " + domain_name + " has no classes");
    std::set<std::string> seen(classes.begin(), classes.end());
    require(seen.size() == classes.size(), ErrorCode::InvalidArgument, "preset " + domain_name + " repeats a class");
}

namespace {

const std::map<std::string, PartOrderPreset>& presets() {
    static const std::map<std::string, PartOrderPreset> p = {
        {"church", {"church", {"sky", "building", "tree", "foreground"}}},
        {"living_room",
         {"living_room", {"floor", "ceiling", "wall", "painting", "window", "fireplace", "sofa", "coffee table"}}},
        {"car", {"car", {"sky", "building", "tree", "foreground", "car"}}},
        {"face", {"face", {"background", "skin", "eye", "mouth", "nose", "hair"}}},
        {"oracle", {"oracle", ProceduralGenerator::kParts}},
    };
    return p;
}

}  // namespace

const PartOrderPreset& preset(const std::string& name) {
    const auto it = presets().find(name);
    require(it != presets().end(), ErrorCode::InvalidArgument, "unknown preset '" + name + "'");
    return it->second;
}

std::vector<std::string> preset_names() {
    std::vector<std::string> names;
    for (const auto& [n, _] : presets()) names.push_back(n);
    return names;
}

RectanglePartSource::RectanglePartSource(Real min_frac, Real max_frac) : min_frac_(min_frac), max_frac_(max_frac) {
    require(0 < min_frac && min_frac <= max_frac && max_frac <= 1, ErrorCode::InvalidArgument,
            "rectangle fractions must satisfy 0 < min <= max <= 1");
}

Mask RectanglePartSource::part_mask(const std::string&, const ImageBatch& image, const LatentCode*, Rng& rng) const {
    const int H = image.height(), W = image.width();
    std::uniform_real_distribution<double> frac(min_frac_, max_frac_);
    const int h = std::max(1, static_cast<int>(std::lround(frac(rng) * H)));
    const int w = std::max(1, static_cast<int>(std::lround(frac(rng) * W)));
    const int y0 = std::uniform_int_distribution<int>(0, H - h)(rng);
    const int x0 = std::uniform_int_distribution<int>(0, W - w)(rng);
    Mask m = Mask::zeros(1, H, W);
    for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x) m.values[static_cast<std::size_t>(y) * W + x] = 1;
    return m;
}

UserMaskPartSource::UserMaskPartSource(std::map<std::string, Mask> masks) : masks_(std::move(masks)) {}

Mask UserMaskPartSource::part_mask(const std::string& cls, const ImageBatch& image, const LatentCode*, Rng&) const {
    const auto it = masks_.find(cls);
    require(it != masks_.end(), ErrorCode::InvalidArgument, "user-mask source has no mask for class '" + cls + "'");
    require(it->second.height() == image.height() && it->second.width() == image.width(), ErrorCode::ShapeMismatch,
            "user mask for class '" + cls + "' does not match the image");
    return it->second.slice(0, 1);
}

OraclePartSource::OraclePartSource(std::shared_ptr<const ProceduralGenerator> g) : g_(std::move(g)) {
    require(g_ != nullptr, ErrorCode::InvalidArgument, "oracle part source needs a procedural generator");
}

Mask OraclePartSource::part_mask(const std::string& cls, const ImageBatch&, const LatentCode* z, Rng&) const {
    require(z != nullptr, ErrorCode::InvalidArgument, "oracle part source needs the source latent for class '" + cls + "'");
    return g_->part_mask(*z, cls);
}

namespace {

RandomCollage build_collage(const PartSource& source, const PartOrderPreset& p, std::uint64_t seed,
                            const std::function<std::pair<ImageBatch, std::optional<LatentCode>>(Rng&)>& draw) {
    p.validate();
    RandomCollage out;
    for (std::size_t i = 0; i < p.classes.size(); ++i) {
        Rng rng = substream(seed, "collage", i);
        auto [image, z] = draw(rng);
        CollageLayer layer;
        try {
            layer.part_mask = source.part_mask(p.classes[i], image, z ? &*z : nullptr, rng);
        } catch (const Error& e) {
            fail(e.code(), "part source '" + source.name() + "', class '" + p.classes[i] + "': " + e.what());
        }
        layer.image = std::move(image);
        layer.z_order = static_cast<int>(i);
        if (i == 0) out.spec.canvas = {layer.image.channels(), layer.image.height(), layer.image.width()};
        if (z) out.source_latents.push_back(std::move(*z));
        out.spec.layers.push_back(std::move(layer));
    }
    out.spec.validate();
    return out;
}

}  // namespace

RandomCollage random_collage(const Generator& g, const PartSource& source, const PartOrderPreset& p,
                             std::uint64_t seed) {
    return build_collage(source, p, seed, [&](Rng& rng) {
        LatentCode z = sample_latent(g.latent_spec(), 1, rng);
        ImageBatch x = generate(g, z);
        return std::pair<ImageBatch, std::optional<LatentCode>>(std::move(x), std::move(z));
    });
}

RandomCollage random_collage(std::span<const ImageBatch> pool, const PartSource& source, const PartOrderPreset& p,
                             std::uint64_t seed) {
    require(!pool.empty(), ErrorCode::EmptyInput, "random_collage: empty image pool");
    return build_collage(source, p, seed, [&](Rng& rng) {
        const std::size_t idx = std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng);
        return std::pair<ImageBatch, std::optional<LatentCode>>(pool[idx].slice(0, 1), std::nullopt);
    });
}

}  // namespace LATCOMP_ABI
}  // namespace latcomp
