#include "latcomp/regressor.hpp"

#include <cmath>
#include <random>

#include "latcomp/masking.hpp"

namespace latcomp {
inline namespace LATCOMP_ABI {

void EncoderConfig::validate() const {
    latent_spec.validate();
    require(input_channels == 3 || input_channels == 4, ErrorCode::InvalidArgument, "encoder input_channels must be 3 or 4");
    require(backbone_depth >= 0 && base_channels >= 1 && hidden >= 1, ErrorCode::InvalidArgument, "bad encoder widths");
    require(resolution >= 8 && (resolution & (resolution - 1)) == 0, ErrorCode::InvalidArgument,
            "encoder resolution must be a power of two >= 8");
    require(loss_weights.image_mse >= 0 && loss_weights.perceptual >= 0 && loss_weights.latent >= 0,
            ErrorCode::InvalidArgument, "loss weights must be non-negative");
    require(loss_weights.image_mse > 0 || loss_weights.perceptual > 0 || loss_weights.latent > 0,
            ErrorCode::InvalidArgument, "at least one loss weight must be positive");
}

Json encoder_config_to_json(const EncoderConfig& c) {
    return {{"backbone_depth", c.backbone_depth},
            {"input_channels", c.input_channels},
            {"resolution", c.resolution},
            {"base_channels", c.base_channels},
            {"hidden", c.hidden},
            {"latent_spec", latent_spec_to_json(c.latent_spec)},
            {"loss_weights",
             {{"image_mse", c.loss_weights.image_mse},
              {"perceptual", c.loss_weights.perceptual},
              {"latent", c.loss_weights.latent}}},
            {"seed", c.seed}};
}

EncoderConfig encoder_config_from_json(const Json& j) {
    EncoderConfig c;
    c.backbone_depth = j.at("backbone_depth").get<int>();
    c.input_channels = j.at("input_channels").get<int>();
    c.resolution = j.at("resolution").get<int>();
    c.base_channels = j.at("base_channels").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.latent_spec = latent_spec_from_json(j.at("latent_spec"));
    const Json& w = j.at("loss_weights");
    c.loss_weights = {w.at("image_mse").get<Real>(), w.at("perceptual").get<Real>(), w.at("latent").get<Real>()};
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
}

nn::Sequential build_encoder_net(const EncoderConfig& config) {
    config.validate();
    nn::Sequential net;
    int ch_in = config.input_channels;
    int ch = config.base_channels;
    int size = config.resolution;
    while (size > 4) {
        net.add<nn::Conv2d>(ch_in, ch, 4, 2, 1);
        net.add<nn::LeakyRelu>(Real(0.2));
        ch_in = ch;
        ch = std::min(ch * 2, config.base_channels * 4);
        size /= 2;
    }
    for (int b = 0; b < config.backbone_depth; ++b) {
        nn::Sequential body;
        body.add<nn::Conv2d>(ch_in, ch_in, 3, 1, 1);
        body.add<nn::LeakyRelu>(Real(0.2));
        body.add<nn::Conv2d>(ch_in, ch_in, 3, 1, 1);
        net.add<nn::Residual>(std::move(body));
        net.add<nn::LeakyRelu>(Real(0.2));
    }
    net.add<nn::Reshape>(Shape{ch_in * size * size});
    net.add<nn::Linear>(ch_in * size * size, config.hidden);
    net.add<nn::LeakyRelu>(Real(0.2));
    net.add<nn::Linear>(config.hidden, config.latent_spec.size());
    return net;
}

Encoder::Encoder(EncoderConfig config) : config_(std::move(config)), net_(build_encoder_net(config_)) {
    Rng rng = substream(config_.seed, "encoder-init");
    nn::init_he(net_, rng);
}

Encoder::Encoder(EncoderConfig config, nn::Sequential net, std::int64_t step_count)
    : config_(std::move(config)), net_(std::move(net)), step_count_(step_count) {
    config_.validate();
}

Tensor Encoder::input_tensor(const ImageBatch& x_m, const Mask* m) const {
    require(x_m.channels() == 3 && x_m.height() == config_.resolution && x_m.width() == config_.resolution,
            ErrorCode::SpecMismatch,
            "encoder expects [N, 3, " + std::to_string(config_.resolution) + ", " + std::to_string(config_.resolution) +
                "] images, got " + shape_str(x_m.values.shape()));
    if (config_.input_channels == 3) {
        require(m == nullptr, ErrorCode::SpecMismatch, "mask-unaware encoder does not take a mask channel");
        return x_m.values;
    }
    require(m != nullptr, ErrorCode::SpecMismatch, "this encoder needs a mask channel");
    require(m->batch() == x_m.batch() && m->height() == x_m.height() && m->width() == x_m.width(),
            ErrorCode::ShapeMismatch, "mask does not match the image batch");
    return concat_channels(x_m.values, m->values);
}

LatentCode Encoder::encode(const ImageBatch& x_m, const Mask* m) const {
    const Tensor out = net_.forward(input_tensor(x_m, m), nullptr);
    const LatentSpec& s = config_.latent_spec;
    return LatentCode(s, out.reshaped({x_m.batch(), s.num_layers, s.dim}));
}

EncoderTrace Encoder::trace(const ImageBatch& x_m, const Mask* m) const {
    auto cache = std::make_shared<nn::Cache>();
    const Tensor out = net_.forward(input_tensor(x_m, m), cache.get());
    const LatentSpec& s = config_.latent_spec;
    EncoderTrace tr;
    tr.latent.spec = s;
    tr.latent.values = out.reshaped({x_m.batch(), s.num_layers, s.dim});
    const Shape out_shape = out.shape();
    tr.pullback = [this, cache, out_shape](const Tensor& grad_latent, std::vector<Tensor>& grads) {
        net_.backward(grad_latent.reshaped(out_shape), *cache, grads, false);
    };
    return tr;
}

Checkpoint Encoder::to_checkpoint() const {
    Checkpoint c;
    c.meta = {{"model", "encoder"}, {"config", encoder_config_to_json(config_)}, {"step_count", step_count_}};
    const auto params = net_.params();
    for (std::size_t i = 0; i < params.size(); ++i) c.tensors.push_back({"p" + std::to_string(i), *params[i]});
    return c;
}

Encoder Encoder::from_checkpoint(const Checkpoint& c) {
    try {
        require(c.meta.value("model", "") == "encoder", ErrorCode::IoError, "not an encoder checkpoint");
        EncoderConfig cfg = encoder_config_from_json(c.meta.at("config"));
        nn::Sequential net = build_encoder_net(cfg);
        const auto params = net.params();
        for (std::size_t i = 0; i < params.size(); ++i) {
            const Tensor& t = c.tensor("p" + std::to_string(i));
            require(t.shape() == params[i]->shape(), ErrorCode::IoError, "encoder parameter " + std::to_string(i) + " has the wrong shape");
            *params[i] = t;
        }
        return Encoder(std::move(cfg), std::move(net), c.meta.at("step_count").get<std::int64_t>());
    } catch (const Json::exception& e) {
        fail(ErrorCode::IoError, std::string("corrupt encoder metadata: ") + e.what());
    }
}

void save_encoder(const Encoder& e, const fs::path& dir) { save_checkpoint(dir, e.to_checkpoint()); }

Encoder load_encoder(const fs::path& dir) {
    try {
        return Encoder::from_checkpoint(load_checkpoint(dir));
    } catch (const Error& err) {
        fail(err.code(), dir.string() + ": " + err.what());
    }
}

LatentCode encode(const Encoder& e, const ImageBatch& x_m, const Mask* m) { return e.encode(x_m, m); }

LatentCode encode_masked(const Encoder& e, const ImageBatch& x, const Mask& m) {
    const ImageBatch x_m = apply_mask(x, m);
    return e.encode(x_m, e.config().input_channels == 4 ? &m : nullptr);
}

ImageBatch reconstruct(const Encoder& e, const Generator& g, const ImageBatch& x, const Mask& m) {
    return generate(g, decoder_input(encode_masked(e, x, m)));
}

// ---------------------------------------------------------------------------
// Perceptual distance

namespace {

constexpr Real kFeatureEps = Real(1e-6);

nn::Sequential perceptual_stage(int in, int out, bool pool) {
    nn::Sequential s;
    if (pool) s.add<nn::AvgPool2>();
    s.add<nn::Conv2d>(in, out, 3, 1, 1);
    s.add<nn::LeakyRelu>(Real(0.2));
    return s;
}

}  // namespace

RandomFeaturePerceptual::RandomFeaturePerceptual(std::uint64_t seed) {
    stages_.push_back(perceptual_stage(3, 8, false));
    stages_.push_back(perceptual_stage(8, 16, true));
    stages_.push_back(perceptual_stage(16, 16, true));
    Rng rng = substream(seed, "perceptual");
    std::normal_distribution<double> bias(0.0, 0.1);
    for (auto& s : stages_) {
        nn::init_he(s, rng);
        for (Tensor* p : s.params())
            if (p->rank() == 1)
                for (Real& v : p->values()) v = static_cast<Real>(bias(rng));
    }
}

std::vector<Tensor> RandomFeaturePerceptual::features(const Tensor& x, std::vector<nn::Cache>* caches) const {
    std::vector<Tensor> feats;
    if (caches) caches->assign(stages_.size(), nn::Cache{});
    Tensor h = x;
    for (std::size_t s = 0; s < stages_.size(); ++s) {
        h = stages_[s].forward(h, caches ? &(*caches)[s] : nullptr);
        feats.push_back(h);
    }
    return feats;
}

namespace {

// Unit-normalises every pixel's channel vector; returns norms [N, H*W].
Tensor normalize_channels(Tensor& f) {
    const int N = f.dim(0), C = f.dim(1);
    const std::size_t P = static_cast<std::size_t>(f.dim(2)) * f.dim(3);
    Tensor norms({N, static_cast<int>(P)});
    for (int n = 0; n < N; ++n) {
        Real* v = f.sample(n);
        for (std::size_t p = 0; p < P; ++p) {
            double ss = 0;
            for (int c = 0; c < C; ++c) ss += double(v[c * P + p]) * v[c * P + p];
            const Real norm = static_cast<Real>(std::sqrt(ss));
            norms[n * P + p] = norm;
            const Real inv = Real(1) / (norm + kFeatureEps);
            for (int c = 0; c < C; ++c) v[c * P + p] *= inv;
        }
    }
    return norms;
}

}  // namespace

std::vector<Real> RandomFeaturePerceptual::distance(const ImageBatch& x, const ImageBatch& y) const {
    require_same_shape(x.values, y.values, "perceptual_distance");
    return trace(x, y).distance;
}

PerceptualTrace RandomFeaturePerceptual::trace(const ImageBatch& x, const ImageBatch& y) const {
    require_same_shape(x.values, y.values, "perceptual_distance");
    const int N = x.batch();
    auto caches = std::make_shared<std::vector<nn::Cache>>();
    std::vector<Tensor> fx = features(x.values, nullptr);
    auto fy = std::make_shared<std::vector<Tensor>>(features(y.values, caches.get()));
    auto raw_y = std::make_shared<std::vector<Tensor>>(*fy);  // pre-normalisation
    auto norms_y = std::make_shared<std::vector<Tensor>>();
    PerceptualTrace tr;
    tr.distance.assign(static_cast<std::size_t>(N), Real(0));
    for (std::size_t s = 0; s < fx.size(); ++s) {
        normalize_channels(fx[s]);
        norms_y->push_back(normalize_channels((*fy)[s]));
        const std::size_t P = static_cast<std::size_t>(fx[s].dim(2)) * fx[s].dim(3);
        for (int n = 0; n < N; ++n) {
            const Real* a = fx[s].sample(n);
            const Real* b = (*fy)[s].sample(n);
            double d = 0;
            for (std::size_t i = 0; i < fx[s].sample_size(); ++i) d += double(a[i] - b[i]) * (a[i] - b[i]);
            tr.distance[static_cast<std::size_t>(n)] += static_cast<Real>(d / static_cast<double>(P));
        }
    }
    auto fxs = std::make_shared<std::vector<Tensor>>(std::move(fx));
    tr.pullback = [this, caches, fxs, fy, raw_y, norms_y, N](std::span<const Real> weight) {
        std::vector<Tensor> g_feat;
        for (std::size_t s = 0; s < fxs->size(); ++s) {
            const Tensor& a = (*fxs)[s];
            const Tensor& b = (*fy)[s];
            const Tensor& raw = (*raw_y)[s];
            const Tensor& norms = (*norms_y)[s];
            const int C = a.dim(1);
            const std::size_t P = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
            Tensor g(a.shape());
            for (int n = 0; n < N; ++n) {
                const Real w = weight[static_cast<std::size_t>(n)] * Real(2) / static_cast<Real>(P);
                const Real* av = a.sample(n);
                const Real* bv = b.sample(n);
                const Real* rv = raw.sample(n);
                Real* gv = g.sample(n);
                for (std::size_t p = 0; p < P; ++p) {
                    // f_hat = f / (|f| + eps): df = g_hat / (|f| + eps) - f <f, g_hat> / (|f| (|f| + eps)^2)
                    const Real norm = norms[n * P + p];
                    const Real denom = norm + kFeatureEps;
                    double dot = 0;
                    for (int c = 0; c < C; ++c) dot += double(rv[c * P + p]) * w * (bv[c * P + p] - av[c * P + p]);
                    for (int c = 0; c < C; ++c) {
                        const Real gh = w * (bv[c * P + p] - av[c * P + p]);
                        Real v = gh / denom;
                        if (norm > 0) v -= static_cast<Real>(rv[c * P + p] * dot / (norm * denom * denom));
                        gv[c * P + p] = v;
                    }
                }
            }
            g_feat.push_back(std::move(g));
        }
        Tensor g = g_feat.back();
        for (std::size_t s = stages_.size(); s-- > 0;) {
            g = stages_[s].backward(g, (*caches)[s], {}, true);
            if (s > 0) g += g_feat[s - 1];
        }
        return g;
    };
    return tr;
}

const PerceptualDistance& default_perceptual() {
    static const RandomFeaturePerceptual instance;
    return instance;
}

std::vector<Real> perceptual_distance(const ImageBatch& x, const ImageBatch& y) {
    return default_perceptual().distance(x, y);
}

// ---------------------------------------------------------------------------
// Latent losses

namespace {

void check_latent_pair(const LatentCode& a, const LatentCode& b, LatentKind kind, const char* who) {
    require(a.spec == b.spec && a.spec.kind == kind, ErrorCode::SpecMismatch,
            std::string(who) + ": " + a.spec.summary() + " vs " + b.spec.summary());
    require(a.batch() == b.batch(), ErrorCode::ShapeMismatch, std::string(who) + ": batch mismatch");
}

double norm_of(const Real* v, std::size_t n) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += double(v[i]) * v[i];
    return std::sqrt(s);
}

}  // namespace

std::vector<Real> latent_loss_cosine(const LatentCode& z, const LatentCode& z_hat) {
    check_latent_pair(z, z_hat, LatentKind::SphericalZ, "latent_loss_cosine");
    const std::size_t D = z.values.sample_size();
    std::vector<Real> out;
    for (int n = 0; n < z.batch(); ++n) {
        const Real* a = z.values.sample(n);
        const Real* b = z_hat.values.sample(n);
        const double na = norm_of(a, D), nb = norm_of(b, D);
        require(na > 0 && nb > 0, ErrorCode::DegenerateLatent, "cosine loss of a zero latent");
        double dot = 0;
        for (std::size_t i = 0; i < D; ++i) dot += double(a[i]) * b[i];
        out.push_back(static_cast<Real>(1.0 - dot / (na * nb)));
    }
    return out;
}

Tensor latent_loss_cosine_grad(const LatentCode& z, const LatentCode& z_hat, std::span<const Real> weight) {
    check_latent_pair(z, z_hat, LatentKind::SphericalZ, "latent_loss_cosine");
    const std::size_t D = z.values.sample_size();
    Tensor g(z_hat.values.shape());
    for (int n = 0; n < z.batch(); ++n) {
        const Real* a = z.values.sample(n);
        const Real* b = z_hat.values.sample(n);
        const double na = norm_of(a, D), nb = norm_of(b, D);
        require(na > 0 && nb > 0, ErrorCode::DegenerateLatent, "cosine loss of a zero latent");
        double dot = 0;
        for (std::size_t i = 0; i < D; ++i) dot += double(a[i]) * b[i];
        const double cos = dot / (na * nb);
        Real* o = g.sample(n);
        // d(1 - cos)/db = -(a/|a| - cos b/|b|) / |b|
        for (std::size_t i = 0; i < D; ++i)
            o[i] = static_cast<Real>(-weight[static_cast<std::size_t>(n)] * (a[i] / na - cos * b[i] / nb) / nb);
    }
    return g;
}

std::vector<Real> latent_loss_mse(const LatentCode& w, const LatentCode& w_hat) {
    check_latent_pair(w, w_hat, LatentKind::PerLayerW, "latent_loss_mse");
    const std::size_t D = w.values.sample_size();
    std::vector<Real> out;
    for (int n = 0; n < w.batch(); ++n) {
        const Real* a = w.values.sample(n);
        const Real* b = w_hat.values.sample(n);
        double s = 0;
        for (std::size_t i = 0; i < D; ++i) s += double(a[i] - b[i]) * (a[i] - b[i]);
        out.push_back(static_cast<Real>(s / static_cast<double>(D)));
    }
    return out;
}

Tensor latent_loss_mse_grad(const LatentCode& w, const LatentCode& w_hat, std::span<const Real> weight) {
    check_latent_pair(w, w_hat, LatentKind::PerLayerW, "latent_loss_mse");
    const std::size_t D = w.values.sample_size();
    Tensor g(w_hat.values.shape());
    for (int n = 0; n < w.batch(); ++n) {
        const Real* a = w.values.sample(n);
        const Real* b = w_hat.values.sample(n);
        Real* o = g.sample(n);
        const Real k = weight[static_cast<std::size_t>(n)] * Real(2) / static_cast<Real>(D);
        for (std::size_t i = 0; i < D; ++i) o[i] = k * (b[i] - a[i]);
    }
    return g;
}

std::vector<Real> image_mse(const ImageBatch& x, const ImageBatch& y) {
    require_same_shape(x.values, y.values, "image_mse");
    const std::size_t D = x.values.sample_size();
    std::vector<Real> out;
    for (int n = 0; n < x.batch(); ++n) {
        const Real* a = x.values.sample(n);
        const Real* b = y.values.sample(n);
        double s = 0;
        for (std::size_t i = 0; i < D; ++i) s += double(a[i] - b[i]) * (a[i] - b[i]);
        out.push_back(static_cast<Real>(s / static_cast<double>(D)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Total loss

namespace {

double mean_of(const std::vector<Real>& v) {
    double s = 0;
    for (Real x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

LossBreakdown total_loss(const Encoder& e, const Generator& g, const ImageBatch& x, const LatentCode& z,
                         const Mask* m, std::vector<Tensor>* grads, const PerceptualDistance& perceptual) {
    return weighted_loss(e, g, x, &z, m, e.config().loss_weights, grads, perceptual);
}

LossBreakdown weighted_loss(const Encoder& e, const Generator& g, const ImageBatch& x, const LatentCode* zp,
                            const Mask* m, const LossWeights& w, std::vector<Tensor>* grads,
                            const PerceptualDistance& perceptual) {
    const EncoderConfig& cfg = e.config();
    require(g.latent_spec() == cfg.latent_spec, ErrorCode::SpecMismatch,
            "encoder and generator must share a latent spec: " + cfg.latent_spec.summary() + " vs " +
                g.latent_spec().summary());
    require(zp != nullptr || w.latent == 0, ErrorCode::InvalidArgument, "latent loss needs a target latent");
    if (zp) {
        require(zp->spec == cfg.latent_spec, ErrorCode::SpecMismatch,
                "target latent " + zp->spec.summary() + " vs encoder " + cfg.latent_spec.summary());
        require(zp->batch() == x.batch(), ErrorCode::ShapeMismatch, "latent and image batch sizes differ");
    }
    const int B = x.batch();

    const ImageBatch x_m = m ? apply_mask(x, *m) : x;
    Mask ones;
    const Mask* enc_mask = nullptr;
    if (cfg.input_channels == 4) {
        if (!m) ones = Mask::ones(B, x.height(), x.width());
        enc_mask = m ? m : &ones;
    }
    const EncoderTrace etr = e.trace(x_m, enc_mask);
    const LatentCode& z_hat = etr.latent;
    require(z_hat.values.all_finite(), ErrorCode::NumericalFailure, "encoder produced non-finite latents");

    const bool need_image = w.image_mse > 0 || w.perceptual > 0;
    LossBreakdown out;
    Tensor grad_image;
    GeneratorTrace gtr;
    if (need_image) {
        gtr = g.trace(decoder_input(z_hat));
        grad_image = Tensor(x.values.shape());
    }

    if (w.image_mse > 0) {
        out.mse = w.image_mse * mean_of(image_mse(x, gtr.image));
        if (grads) {
            const Real k = w.image_mse * Real(2) / static_cast<Real>(x.values.sample_size() * B);
            for (std::size_t i = 0; i < grad_image.size(); ++i) grad_image[i] += k * (gtr.image.values[i] - x.values[i]);
        }
    }
    if (w.perceptual > 0) {
        const PerceptualTrace ptr = perceptual.trace(x, gtr.image);
        out.perceptual = w.perceptual * mean_of(ptr.distance);
        if (grads) {
            std::vector<Real> pw(static_cast<std::size_t>(B), w.perceptual / static_cast<Real>(B));
            grad_image += ptr.pullback(pw);
        }
    }
    Tensor grad_latent(z_hat.values.shape());
    if (w.latent > 0) {
        std::vector<Real> lw(static_cast<std::size_t>(B), w.latent / static_cast<Real>(B));
        if (cfg.latent_spec.kind == LatentKind::SphericalZ) {
            out.latent = w.latent * mean_of(latent_loss_cosine(*zp, z_hat));
            if (grads) grad_latent += latent_loss_cosine_grad(*zp, z_hat, lw);
        } else {
            out.latent = w.latent * mean_of(latent_loss_mse(*zp, z_hat));
            if (grads) grad_latent += latent_loss_mse_grad(*zp, z_hat, lw);
        }
    }
    out.total = out.mse + out.perceptual + out.latent;

    if (grads) {
        if (need_image) {
            const Tensor g_dec = gtr.pullback(grad_image);
            if (cfg.latent_spec.kind == LatentKind::SphericalZ) grad_latent += normalize_latent_backward(z_hat, g_dec);
            else grad_latent += g_dec;
        }
        etr.pullback(grad_latent, *grads);
    }
    return out;
}

}  // namespace LATCOMP_ABI
}  // namespace latcomp
