#include "latcomp/generators.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace latcomp {
inline namespace LATCOMP_ABI {

std::string generator_kind_name(GeneratorKind kind) {
    switch (kind) {
        case GeneratorKind::ToyAdversarial: return "TOY_ADVERSARIAL";
        case GeneratorKind::ProceduralOracle: return "PROCEDURAL_ORACLE";
        case GeneratorKind::Imported: return "IMPORTED";
    }
    return "UNKNOWN";
}

LatentCode sample_latent(const LatentSpec& spec, int count, Rng& rng) {
    spec.validate();
    require(count >= 1, ErrorCode::InvalidArgument, "sample_latent needs count >= 1");
    Tensor v({count, spec.num_layers, spec.dim});
    std::normal_distribution<double> nd(0.0, 1.0);
    for (Real& x : v.values()) x = static_cast<Real>(nd(rng));
    LatentCode z(spec, std::move(v));
    return spec.kind == LatentKind::SphericalZ ? normalize_latent(z) : z;
}

LatentCode sample_latent(const LatentSpec& spec, int count, std::uint64_t seed) {
    Rng rng = substream(seed, "latent");
    return sample_latent(spec, count, rng);
}

LatentCode normalize_latent(const LatentCode& z) {
    require(z.spec.kind == LatentKind::SphericalZ, ErrorCode::SpecMismatch, "normalize_latent needs SPHERICAL_Z");
    LatentCode out = z;
    for (int n = 0; n < z.batch(); ++n) {
        Real* v = out.values.sample(n);
        const std::size_t D = out.values.sample_size();
        double ss = 0;
        for (std::size_t i = 0; i < D; ++i) ss += double(v[i]) * v[i];
        require(ss > 0, ErrorCode::DegenerateLatent, "cannot normalise a zero latent (sample " + std::to_string(n) + ")");
        const double inv = 1.0 / std::sqrt(ss);
        for (std::size_t i = 0; i < D; ++i) v[i] = static_cast<Real>(v[i] * inv);
    }
    return out;
}

Tensor normalize_latent_backward(const LatentCode& z, const Tensor& grad_normalized) {
    // y = z / |z|  =>  dz = (g - y <g, y>) / |z|
    require_same_shape(z.values, grad_normalized, "normalize_latent_backward");
    Tensor gz(z.values.shape());
    const std::size_t D = z.values.sample_size();
    for (int n = 0; n < z.batch(); ++n) {
        const Real* v = z.values.sample(n);
        const Real* g = grad_normalized.sample(n);
        double ss = 0;
        for (std::size_t i = 0; i < D; ++i) ss += double(v[i]) * v[i];
        require(ss > 0, ErrorCode::DegenerateLatent, "zero latent in normalisation backward");
        const double norm = std::sqrt(ss);
        double dot = 0;
        for (std::size_t i = 0; i < D; ++i) dot += double(g[i]) * v[i] / norm;
        Real* o = gz.sample(n);
        for (std::size_t i = 0; i < D; ++i) o[i] = static_cast<Real>((g[i] - dot * v[i] / norm) / norm);
    }
    return gz;
}

ImageBatch generate(const Generator& g, const LatentCode& z) {
    require(z.spec == g.latent_spec(), ErrorCode::SpecMismatch,
            "latent " + z.spec.summary() + " does not match generator " + g.latent_spec().summary());
    return g.generate(z);
}

LatentCode decoder_input(const LatentCode& code) {
    return code.spec.kind == LatentKind::SphericalZ ? normalize_latent(code) : code;
}

// ---------------------------------------------------------------------------
// Procedural oracle

Real smoother_step(Real t) {
    t = std::clamp(t, Real(0), Real(1));
    return t * t * t * (t * (t * 6 - 15) + 10);
}

Real smoother_step_derivative(Real t) {
    if (t <= 0 || t >= 1) return 0;
    return 30 * t * t * (t - 1) * (t - 1);
}

namespace {

// param = offset + amplitude * tanh(base + gain * scale * z)
constexpr Real kOffset[SceneBlocks::kUsed] = {0, 0, 0, 0, 0, 0, Real(0.5),                       // background
                                              Real(0.5), Real(0.55), Real(0.2), Real(0.2), 0, 0, 0,  // building
                                              Real(0.5), Real(0.6), Real(0.14), 0, 0, 0};            // tree
constexpr Real kAmplitude[SceneBlocks::kUsed] = {
    Real(0.9), Real(0.9), Real(0.9), Real(0.9), Real(0.9), Real(0.9), Real(0.2),
    Real(0.3), Real(0.15), Real(0.07), Real(0.08), Real(0.9), Real(0.9), Real(0.9),
    Real(0.35), Real(0.2), Real(0.05), Real(0.9), Real(0.9), Real(0.9)};
constexpr Real kDefaultBase[SceneBlocks::kUsed] = {
    Real(-0.6), Real(-0.1), Real(0.8), Real(-0.2), Real(0.4), Real(-0.5), 0,
    Real(-0.4), 0, 0, 0, Real(0.6), Real(-0.2), Real(-0.5),
    Real(0.5), Real(0.2), 0, Real(-0.6), Real(0.5), Real(-0.6)};
constexpr Real kHorizonSoftness = Real(0.06);

Real sigmoid(Real x) { return Real(1) / (Real(1) + std::exp(-x)); }

}  // namespace

ProceduralGenerator::ProceduralGenerator(LatentSpec spec, ImageShape shape, std::uint64_t seed)
    : spec_(spec), shape_(shape), seed_(seed), base_({SceneBlocks::kUsed}), gain_({SceneBlocks::kUsed}, Real(1)) {
    spec_.validate();
    require(spec_.size() >= SceneBlocks::kUsed, ErrorCode::SpecMismatch,
            "procedural oracle needs at least " + std::to_string(SceneBlocks::kUsed) + " latent coordinates");
    require(shape_.channels == 3 && shape_.height >= 4 && shape_.width >= 4, ErrorCode::ShapeMismatch,
            "procedural oracle renders 3-channel images of at least 4x4");
    Rng rng = substream(seed, "procedural-palette");
    std::uniform_real_distribution<double> jitter(-0.15, 0.15);
    for (int i = 0; i < SceneBlocks::kUsed; ++i) base_[i] = kDefaultBase[i] + static_cast<Real>(jitter(rng));
}

ProceduralGenerator::ProceduralGenerator(LatentSpec spec, ImageShape shape, std::uint64_t seed, Tensor base, Tensor gain)
    : spec_(spec), shape_(shape), seed_(seed), base_(std::move(base)), gain_(std::move(gain)) {
    spec_.validate();
    require(spec_.size() >= SceneBlocks::kUsed && base_.size() == SceneBlocks::kUsed &&
                gain_.size() == SceneBlocks::kUsed,
            ErrorCode::SpecMismatch, "procedural oracle weights do not match its latent layout");
}

Real ProceduralGenerator::coordinate_scale() const {
    return spec_.kind == LatentKind::SphericalZ ? static_cast<Real>(std::sqrt(double(spec_.size()))) : Real(1);
}

SceneParams ProceduralGenerator::scene(const LatentCode& z, int index) const {
    const Real* v = z.values.sample(index);
    const Real s = coordinate_scale();
    Real p[SceneBlocks::kUsed];
    for (int i = 0; i < SceneBlocks::kUsed; ++i) p[i] = kOffset[i] + kAmplitude[i] * std::tanh(base_[i] + gain_[i] * s * v[i]);
    SceneParams sp{};
    std::copy_n(p + 0, 3, sp.sky);
    std::copy_n(p + 3, 3, sp.ground);
    sp.horizon = p[6];
    sp.building_cx = p[7];
    sp.building_cy = p[8];
    sp.building_hw = p[9];
    sp.building_hh = p[10];
    std::copy_n(p + 11, 3, sp.building_rgb);
    sp.tree_cx = p[14];
    sp.tree_cy = p[15];
    sp.tree_r = p[16];
    std::copy_n(p + 17, 3, sp.tree_rgb);
    return sp;
}

namespace {

struct PixelAlphas {
    Real t;   // horizon blend
    Real rx, ry, ax_arg, ay_arg;
    Real building;
    Real tree_arg, tree_d;
    Real tree;
};

PixelAlphas pixel_alphas(const SceneParams& sp, Real X, Real Y, Real ex, Real ey, Real et) {
    PixelAlphas a{};
    a.t = sigmoid((Y - sp.horizon) / kHorizonSoftness);
    a.ax_arg = (sp.building_hw - std::abs(X - sp.building_cx)) / ex + Real(0.5);
    a.ay_arg = (sp.building_hh - std::abs(Y - sp.building_cy)) / ey + Real(0.5);
    a.rx = smoother_step(a.ax_arg);
    a.ry = smoother_step(a.ay_arg);
    a.building = a.rx * a.ry;
    const Real dx = X - sp.tree_cx, dy = Y - sp.tree_cy;
    a.tree_d = std::sqrt(dx * dx + dy * dy);
    a.tree_arg = (sp.tree_r - a.tree_d) / et + Real(0.5);
    a.tree = smoother_step(a.tree_arg);
    return a;
}

}  // namespace

ImageBatch ProceduralGenerator::render(const std::vector<SceneParams>& scenes) const {
    const int N = static_cast<int>(scenes.size()), H = shape_.height, W = shape_.width;
    const Real ex = kEdgePixels / W, ey = kEdgePixels / H, et = kEdgePixels / std::max(W, H);
    Tensor img({N, 3, H, W});
    for (int n = 0; n < N; ++n) {
        const SceneParams& sp = scenes[static_cast<std::size_t>(n)];
        for (int y = 0; y < H; ++y) {
            const Real Y = (y + Real(0.5)) / H;
            for (int x = 0; x < W; ++x) {
                const Real X = (x + Real(0.5)) / W;
                const PixelAlphas a = pixel_alphas(sp, X, Y, ex, ey, et);
                for (int c = 0; c < 3; ++c) {
                    const Real bg = sp.sky[c] * (1 - a.t) + sp.ground[c] * a.t;
                    const Real mid = bg * (1 - a.building) + sp.building_rgb[c] * a.building;
                    img.at(n, c, y, x) = mid * (1 - a.tree) + sp.tree_rgb[c] * a.tree;
                }
            }
        }
    }
    ImageBatch out;
    out.values = std::move(img);
    return out;
}

GeneratorTrace ProceduralGenerator::trace(const LatentCode& z) const {
    require(z.spec == spec_, ErrorCode::SpecMismatch, "latent " + z.spec.summary() + " vs oracle " + spec_.summary());
    std::vector<SceneParams> scenes;
    for (int n = 0; n < z.batch(); ++n) scenes.push_back(scene(z, n));
    GeneratorTrace tr;
    tr.image = render(scenes);
    tr.pullback = [this, z, scenes](const Tensor& grad) {
        const int N = z.batch(), H = shape_.height, W = shape_.width;
        require(grad.shape() == Shape({N, 3, H, W}), ErrorCode::ShapeMismatch, "oracle pullback gradient shape");
        const Real ex = kEdgePixels / W, ey = kEdgePixels / H, et = kEdgePixels / std::max(W, H);
        const Real s = coordinate_scale();
        Tensor gz(z.values.shape());
        for (int n = 0; n < N; ++n) {
            const SceneParams& sp = scenes[static_cast<std::size_t>(n)];
            double dp[SceneBlocks::kUsed] = {};
            for (int y = 0; y < H; ++y) {
                const Real Y = (y + Real(0.5)) / H;
                for (int x = 0; x < W; ++x) {
                    const Real X = (x + Real(0.5)) / W;
                    const PixelAlphas a = pixel_alphas(sp, X, Y, ex, ey, et);
                    double d_tree = 0, d_building = 0, d_t = 0;
                    for (int c = 0; c < 3; ++c) {
                        const Real g = grad.at(n, c, y, x);
                        if (g == 0) continue;
                        const Real bg = sp.sky[c] * (1 - a.t) + sp.ground[c] * a.t;
                        const Real mid = bg * (1 - a.building) + sp.building_rgb[c] * a.building;
                        dp[17 + c] += g * a.tree;
                        d_tree += g * (sp.tree_rgb[c] - mid);
                        const double d_mid = g * (1 - a.tree);
                        dp[11 + c] += d_mid * a.building;
                        d_building += d_mid * (sp.building_rgb[c] - bg);
                        const double d_bg = d_mid * (1 - a.building);
                        dp[0 + c] += d_bg * (1 - a.t);
                        dp[3 + c] += d_bg * a.t;
                        d_t += d_bg * (sp.ground[c] - sp.sky[c]);
                    }
                    dp[6] += d_t * (-a.t * (1 - a.t) / kHorizonSoftness);
                    if (d_building != 0) {
                        const double drx = d_building * a.ry * smoother_step_derivative(a.ax_arg) / ex;
                        const double dry = d_building * a.rx * smoother_step_derivative(a.ay_arg) / ey;
                        const Real sx = X > sp.building_cx ? Real(1) : (X < sp.building_cx ? Real(-1) : Real(0));
                        const Real sy = Y > sp.building_cy ? Real(1) : (Y < sp.building_cy ? Real(-1) : Real(0));
                        dp[9] += drx;
                        dp[7] += drx * sx;
                        dp[10] += dry;
                        dp[8] += dry * sy;
                    }
                    if (d_tree != 0 && a.tree_d > 0) {
                        const double dr = d_tree * smoother_step_derivative(a.tree_arg) / et;
                        dp[16] += dr;
                        dp[14] += dr * (X - sp.tree_cx) / a.tree_d;
                        dp[15] += dr * (Y - sp.tree_cy) / a.tree_d;
                    }
                }
            }
            const Real* v = z.values.sample(n);
            Real* o = gz.sample(n);
            for (int i = 0; i < SceneBlocks::kUsed; ++i) {
                const double th = std::tanh(double(base_[i]) + double(gain_[i]) * s * v[i]);
                o[i] = static_cast<Real>(dp[i] * kAmplitude[i] * (1.0 - th * th) * gain_[i] * s);
            }
        }
        return gz;
    };
    return tr;
}

Tensor ProceduralGenerator::part_alpha(const LatentCode& z, const std::string& part) const {
    const int N = z.batch(), H = shape_.height, W = shape_.width;
    const Real ex = kEdgePixels / W, ey = kEdgePixels / H, et = kEdgePixels / std::max(W, H);
    Tensor out({N, 1, H, W});
    for (int n = 0; n < N; ++n) {
        const SceneParams sp = scene(z, n);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const PixelAlphas a = pixel_alphas(sp, (x + Real(0.5)) / W, (y + Real(0.5)) / H, ex, ey, et);
                Real v;
                if (part == "background") v = (1 - a.building) * (1 - a.tree);
                else if (part == "building") v = a.building * (1 - a.tree);
                else if (part == "tree") v = a.tree;
                else fail(ErrorCode::InvalidArgument, "unknown oracle part '" + part + "'");
                out.at(n, 0, y, x) = v;
            }
    }
    return out;
}

Mask ProceduralGenerator::part_mask(const LatentCode& z, const std::string& part) const {
    Tensor a = part_alpha(z, part);
    for (Real& v : a.values()) v = v > Real(0.5) ? Real(1) : Real(0);
    return Mask(std::move(a));
}

Mask ProceduralGenerator::part_support(const LatentCode& z, const std::string& part, Real slack) const {
    const int N = z.batch(), H = shape_.height, W = shape_.width;
    const Real ex = kEdgePixels / W, ey = kEdgePixels / H, et = kEdgePixels / std::max(W, H);
    Tensor out({N, 1, H, W});
    for (int n = 0; n < N; ++n) {
        const SceneParams sp = scene(z, n);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const Real X = (x + Real(0.5)) / W, Y = (y + Real(0.5)) / H;
                bool inside = true;
                if (part == "building") {
                    inside = std::abs(X - sp.building_cx) <= sp.building_hw + slack + ex &&
                             std::abs(Y - sp.building_cy) <= sp.building_hh + slack + ey;
                } else if (part == "tree") {
                    inside = std::hypot(X - sp.tree_cx, Y - sp.tree_cy) <= sp.tree_r + slack + et;
                } else if (part != "background") {
                    fail(ErrorCode::InvalidArgument, "unknown oracle part '" + part + "'");
                }
                out.at(n, 0, y, x) = inside ? Real(1) : Real(0);
            }
    }
    return Mask(std::move(out));
}

std::uint64_t ProceduralGenerator::checksum() const {
    std::uint64_t h = fnv1a(base_.data(), base_.size() * sizeof(Real));
    return fnv1a(gain_.data(), gain_.size() * sizeof(Real), h);
}

Checkpoint ProceduralGenerator::to_checkpoint() const {
    Checkpoint c;
    c.meta = {{"model", "generator"},
              {"kind", generator_kind_name(kind())},
              {"latent_spec", latent_spec_to_json(spec_)},
              {"output_shape", {shape_.channels, shape_.height, shape_.width}},
              {"seed", seed_}};
    c.tensors = {{"base", base_}, {"gain", gain_}};
    return c;
}

std::shared_ptr<const ProceduralGenerator> build_procedural_generator(const LatentSpec& spec, ImageShape shape,
                                                                      std::uint64_t seed) {
    return std::make_shared<const ProceduralGenerator>(spec, shape, seed);
}

// ---------------------------------------------------------------------------
// Toy adversarial generator

namespace {

int toy_blocks(int resolution) {
    require(resolution == 32 || resolution == 64, ErrorCode::InvalidArgument, "toy generator resolution must be 32 or 64");
    return resolution == 32 ? 3 : 4;
}

}  // namespace

nn::Sequential build_toy_generator_net(const ToyGeneratorConfig& config) {
    config.latent.validate();
    const int blocks = toy_blocks(config.resolution);
    const int in = config.latent.size();
    nn::Sequential net;
    if (config.latent.kind == LatentKind::SphericalZ) net.add<nn::PixelNorm>();
    net.add<nn::Reshape>(Shape{in, 1, 1});
    int ch = config.base_channels << (blocks - 1);
    net.add<nn::ConvTranspose2d>(in, ch, 4, 1, 0);  // 1x1 -> 4x4
    net.add<nn::LeakyRelu>(Real(0.2));
    for (int b = 1; b < blocks; ++b) {
        net.add<nn::ConvTranspose2d>(ch, ch / 2, 4, 2, 1);
        net.add<nn::LeakyRelu>(Real(0.2));
        ch /= 2;
    }
    net.add<nn::ConvTranspose2d>(ch, 3, 4, 2, 1);
    net.add<nn::Tanh>();
    return net;
}

nn::Sequential build_toy_discriminator_net(const ToyGeneratorConfig& config) {
    const int blocks = toy_blocks(config.resolution);
    nn::Sequential net;
    int ch = config.base_channels;
    net.add<nn::Conv2d>(3, ch, 4, 2, 1);
    net.add<nn::LeakyRelu>(Real(0.2));
    for (int b = 1; b < blocks; ++b) {
        net.add<nn::Conv2d>(ch, ch * 2, 4, 2, 1);
        net.add<nn::LeakyRelu>(Real(0.2));
        ch *= 2;
    }
    net.add<nn::Conv2d>(ch, 1, 4, 1, 0);  // 4x4 -> 1x1
    net.add<nn::Reshape>(Shape{1});
    return net;
}

ToyGenerator::ToyGenerator(const ToyGeneratorConfig& config, nn::Sequential net)
    : config_(config), net_(std::move(net)) {}

GeneratorTrace ToyGenerator::trace(const LatentCode& z) const {
    require(z.spec == config_.latent, ErrorCode::SpecMismatch,
            "latent " + z.spec.summary() + " vs generator " + config_.latent.summary());
    auto cache = std::make_shared<nn::Cache>();
    GeneratorTrace tr;
    tr.image.values = net_.forward(z.values.reshaped({z.batch(), z.spec.size()}), cache.get());
    const Shape zshape = z.values.shape();
    tr.pullback = [this, cache, zshape](const Tensor& grad) {
        return net_.backward(grad, *cache, {}, true).reshaped(zshape);
    };
    return tr;
}

Checkpoint ToyGenerator::to_checkpoint() const {
    Checkpoint c;
    c.meta = {{"model", "generator"},
              {"kind", generator_kind_name(kind())},
              {"latent_spec", latent_spec_to_json(config_.latent)},
              {"output_shape", {3, config_.resolution, config_.resolution}},
              {"seed", config_.seed},
              {"base_channels", config_.base_channels},
              {"resolution", config_.resolution}};
    const auto params = net_.params();
    for (std::size_t i = 0; i < params.size(); ++i) c.tensors.push_back({"p" + std::to_string(i), *params[i]});
    return c;
}

ImageStream rectangles_dataset(int resolution, std::uint64_t seed) {
    return [resolution, seed](int batch, std::int64_t step) {
        Rng rng = substream(seed, "rectangles", static_cast<std::uint64_t>(step));
        std::uniform_real_distribution<double> col(-0.9, 0.9), pos(0.0, 1.0);
        std::uniform_int_distribution<int> count(1, 3);
        Tensor t({batch, 3, resolution, resolution});
        for (int n = 0; n < batch; ++n) {
            Real bg[3];
            for (Real& c : bg) c = static_cast<Real>(col(rng));
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < resolution; ++y)
                    for (int x = 0; x < resolution; ++x) t.at(n, c, y, x) = bg[c];
            const int rects = count(rng);
            for (int r = 0; r < rects; ++r) {
                Real rgb[3];
                for (Real& c : rgb) c = static_cast<Real>(col(rng));
                int x0 = static_cast<int>(pos(rng) * resolution), x1 = static_cast<int>(pos(rng) * resolution);
                int y0 = static_cast<int>(pos(rng) * resolution), y1 = static_cast<int>(pos(rng) * resolution);
                if (x0 > x1) std::swap(x0, x1);
                if (y0 > y1) std::swap(y0, y1);
                x1 = std::max(x1, x0 + resolution / 8);
                y1 = std::max(y1, y0 + resolution / 8);
                for (int c = 0; c < 3; ++c)
                    for (int y = y0; y < std::min(y1, resolution); ++y)
                        for (int x = x0; x < std::min(x1, resolution); ++x) t.at(n, c, y, x) = rgb[c];
            }
        }
        return ImageBatch(std::move(t));
    };
}

namespace {

Real softplus(Real x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

ToyTrainResult train_toy_generator(const ImageStream& dataset, const ToyGeneratorConfig& config) {
    require(config.steps >= 0 && config.batch_size >= 1, ErrorCode::InvalidArgument, "bad toy generator config");
    Rng init = substream(config.seed, "toy-init");
    nn::Sequential gen = build_toy_generator_net(config);
    nn::Sequential disc = build_toy_discriminator_net(config);
    nn::init_he(gen, init);
    nn::init_he(disc, init);
    nn::Adam::Options opts{config.learning_rate, config.beta1, Real(0.999), Real(1e-8)};
    nn::Adam gen_opt(std::as_const(gen).params(), opts), disc_opt(std::as_const(disc).params(), opts);
    ToyTrainResult result;
    const int B = config.batch_size;
    for (int step = 0; step < config.steps; ++step) {
        Rng rng = substream(config.seed, "toy-train", static_cast<std::uint64_t>(step));
        const ImageBatch real = dataset(B, step);
        require(real.height() == config.resolution && real.width() == config.resolution && real.channels() == 3,
                ErrorCode::ShapeMismatch, "dataset images do not match the generator output shape");
        const LatentCode z = sample_latent(config.latent, B, rng);
        const Tensor zin = z.values.reshaped({B, config.latent.size()});

        // Discriminator: softplus(-D(real)) + softplus(D(fake)).
        const Tensor fake = gen.forward(zin, nullptr);
        nn::Cache c_real, c_fake;
        const Tensor d_real = disc.forward(real.values, &c_real);
        const Tensor d_fake = disc.forward(fake, &c_fake);
        double loss_d = 0;
        Tensor g_real({B, 1}), g_fake({B, 1});
        for (int n = 0; n < B; ++n) {
            loss_d += softplus(-d_real[n]) + softplus(d_fake[n]);
            g_real[n] = -(1 - 1 / (1 + std::exp(-d_real[n]))) / B;
            g_fake[n] = (1 / (1 + std::exp(-d_fake[n]))) / B;
        }
        loss_d /= B;
        auto d_grads = disc.zero_grads();
        disc.backward(g_real, c_real, d_grads, false);
        disc.backward(g_fake, c_fake, d_grads, false);
        disc_opt.step(disc.params(), d_grads);

        // Generator: non-saturating softplus(-D(G(z))).
        nn::Cache c_gen, c_disc;
        const Tensor fake2 = gen.forward(zin, &c_gen);
        const Tensor d_out = disc.forward(fake2, &c_disc);
        double loss_g = 0;
        Tensor g_out({B, 1});
        for (int n = 0; n < B; ++n) {
            loss_g += softplus(-d_out[n]);
            g_out[n] = -(1 - 1 / (1 + std::exp(-d_out[n]))) / B;
        }
        loss_g /= B;
        const Tensor g_img = disc.backward(g_out, c_disc, {}, true);
        auto g_grads = gen.zero_grads();
        gen.backward(g_img, c_gen, g_grads, false);
        gen_opt.step(gen.params(), g_grads);

        if (!std::isfinite(loss_d) || !std::isfinite(loss_g))
            fail(ErrorCode::TrainingDiverged, "toy GAN loss is not finite at step " + std::to_string(step));
        result.history.push_back({step, loss_d, loss_g});
    }
    result.generator = std::make_shared<const ToyGenerator>(config, std::move(gen));
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

Json latent_spec_to_json(const LatentSpec& spec) {
    return {{"kind", latent_kind_name(spec.kind)}, {"dim", spec.dim}, {"num_layers", spec.num_layers}};
}

LatentSpec latent_spec_from_json(const Json& j) {
    LatentSpec s{parse_latent_kind(j.at("kind").get<std::string>()), j.at("dim").get<int>(),
                 j.at("num_layers").get<int>()};
    s.validate();
    return s;
}

void save_generator(const Generator& g, const fs::path& dir) { save_checkpoint(dir, g.to_checkpoint()); }

GeneratorHandle load_generator(const fs::path& dir) {
    const Checkpoint c = load_checkpoint(dir);
    try {
        require(c.meta.value("model", "") == "generator", ErrorCode::IoError, dir.string() + " is not a generator checkpoint");
        const std::string kind = c.meta.at("kind").get<std::string>();
        const LatentSpec spec = latent_spec_from_json(c.meta.at("latent_spec"));
        const auto shape = c.meta.at("output_shape").get<std::vector<int>>();
        require(shape.size() == 3, ErrorCode::IoError, "bad output_shape in " + dir.string());
        const auto seed = c.meta.at("seed").get<std::uint64_t>();
        if (kind == "PROCEDURAL_ORACLE") {
            return std::make_shared<const ProceduralGenerator>(spec, ImageShape{shape[0], shape[1], shape[2]}, seed,
                                                               c.tensor("base"), c.tensor("gain"));
        }
        if (kind == "TOY_ADVERSARIAL") {
            ToyGeneratorConfig cfg;
            cfg.latent = spec;
            cfg.resolution = c.meta.at("resolution").get<int>();
            cfg.base_channels = c.meta.at("base_channels").get<int>();
            cfg.seed = seed;
            nn::Sequential net = build_toy_generator_net(cfg);
            const auto params = net.params();
            require(params.size() == c.tensors.size(), ErrorCode::IoError, "parameter count mismatch in " + dir.string());
            for (std::size_t i = 0; i < params.size(); ++i) {
                const Tensor& t = c.tensor("p" + std::to_string(i));
                require(t.shape() == params[i]->shape(), ErrorCode::IoError,
                        "parameter " + std::to_string(i) + " shape mismatch in " + dir.string());
                *params[i] = t;
            }
            return std::make_shared<const ToyGenerator>(cfg, std::move(net));
        }
        fail(ErrorCode::IoError, "unsupported generator kind '" + kind + "' in " + dir.string());
    } catch (const Json::exception& e) {
        fail(ErrorCode::IoError, "corrupt generator metadata in " + dir.string() + ": " + e.what());
    }
}

}  // namespace LATCOMP_ABI
}  // namespace latcomp
