#include "latcomp/analysis.hpp"

#include <cmath>

#include "latcomp/masking.hpp"
#include "latcomp/metrics.hpp"

namespace latcomp {
inline namespace LATCOMP_ABI {

Real alpha_from_area(const Mask& m_target) {
    const double total = static_cast<double>(m_target.values.size());
    require(total > 0, ErrorCode::EmptyInput, "alpha_from_area: empty mask");
    return static_cast<Real>(1.0 - static_cast<double>(m_target.count_ones()) / total);
}

LatentCode encode_full(const Encoder& e, const ImageBatch& x) {
    if (e.config().input_channels == 3) return e.encode(x, nullptr);
    const Mask ones = Mask::ones(x.batch(), x.height(), x.width());
    return e.encode(x, &ones);
}

namespace {

ImageBatch blend_images(const ImageBatch& a, const ImageBatch& b, Real alpha) {
    ImageBatch out;
    out.values = Tensor(a.values.shape());
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] = alpha * a.values[i] + (1 - alpha) * b.values[i];
    return out;
}

RegionDistances region_distances(const ImageBatch& out, const ImageBatch& x1, const ImageBatch& x2,
                                 const ImageBatch& collage, const Mask& m1, const Mask& m2, const Mask& u) {
    return {masked_l1(x1, out, m1), masked_l1(x2, out, m2), masked_l1(collage, out, u)};
}

}  // namespace

BlendResult blend_compare(const Encoder& e, const Generator& g, const ImageBatch& x1, const ImageBatch& x2,
                          const Mask& m1, const Mask& m2, std::optional<Real> alpha) {
    require_same_shape(x1.values, x2.values, "blend_compare images");
    require_same_shape(m1.values, m2.values, "blend_compare masks");
    require(m1.batch() == x1.batch() && m1.height() == x1.height() && m1.width() == x1.width(),
            ErrorCode::ShapeMismatch, "blend_compare: masks do not match the images");
    for (std::size_t i = 0; i < m1.values.size(); ++i)
        require(!(m1.values[i] > 0 && m2.values[i] > 0), ErrorCode::OverlappingRegions,
                "context and target regions overlap");
    BlendResult r;
    r.alpha = alpha ? *alpha : alpha_from_area(m2);
    require(r.alpha >= 0 && r.alpha <= 1, ErrorCode::InvalidArgument, "alpha must be in [0, 1]");
    r.union_mask = union_masks(std::vector<Mask>{m1, m2});
    r.collage.values = apply_mask(x1, m1).values;
    r.collage.values += apply_mask(x2, m2).values;

    const LatentCode mixed = e.config().input_channels == 4 ? e.encode(r.collage, &r.union_mask)
                                                            : e.encode(r.collage, nullptr);
    r.composition = generate(g, decoder_input(mixed));

    const LatentCode e1 = encode_full(e, x1);
    const LatentCode e2 = encode_full(e, x2);
    LatentCode lat = e1;
    for (std::size_t i = 0; i < lat.values.size(); ++i)
        lat.values[i] = r.alpha * e1.values[i] + (1 - r.alpha) * e2.values[i];
    r.latent_blend = generate(g, decoder_input(lat));
    r.pixel_blend = generate(g, decoder_input(encode_full(e, blend_images(x1, x2, r.alpha))));

    r.composition_distances = region_distances(r.composition, x1, x2, r.collage, m1, m2, r.union_mask);
    r.latent_distances = region_distances(r.latent_blend, x1, x2, r.collage, m1, m2, r.union_mask);
    r.pixel_distances = region_distances(r.pixel_blend, x1, x2, r.collage, m1, m2, r.union_mask);
    return r;
}

BlendResult blend_compare(const Encoder& e, const Generator& g, const ImageBatch& x1, const ImageBatch& x2,
                          const Mask& m2, std::optional<Real> alpha) {
    return blend_compare(e, g, x1, x2, invert_mask(m2), m2, alpha);
}

// ---------------------------------------------------------------------------

Tensor pixel_std(const Tensor& samples) {
    require(samples.rank() == 4 && samples.dim(0) >= 1, ErrorCode::ShapeMismatch, "pixel_std expects [N, C, H, W]");
    const int N = samples.dim(0);
    const std::size_t S = samples.sample_size();
    Tensor out({samples.dim(1), samples.dim(2), samples.dim(3)});
    for (std::size_t i = 0; i < S; ++i) {
        double mean = 0;
        for (int n = 0; n < N; ++n) mean += samples.sample(n)[i];
        mean /= N;
        double var = 0;
        for (int n = 0; n < N; ++n) {
            const double d = samples.sample(n)[i] - mean;
            var += d * d;
        }
        out[i] = static_cast<Real>(std::sqrt(var / N));
    }
    return out;
}

std::vector<Tensor> variation_maps(const std::vector<Tensor>& sigma) {
    require(!sigma.empty(), ErrorCode::EmptyInput, "variation_maps: no components");
    Tensor sum(sigma[0].shape());
    for (const Tensor& s : sigma) {
        require_same_shape(s, sum, "variation_maps");
        sum += s;
    }
    std::vector<Tensor> v;
    for (const Tensor& s : sigma) {
        Tensor out(s.shape());
        for (std::size_t i = 0; i < s.size(); ++i) out[i] = sum[i] > 0 ? s[i] / sum[i] : Real(0);
        v.push_back(std::move(out));
    }
    return v;
}

double independence_score(const Tensor& variation, const Mask& m_c, const Tensor& sigma_sum) {
    require_same_shape(variation, sigma_sum, "independence_score");
    const int C = variation.dim(0);
    const std::size_t P = static_cast<std::size_t>(variation.dim(1)) * variation.dim(2);
    require(m_c.values.size() == P, ErrorCode::ShapeMismatch, "independence_score: mask does not match the maps");
    double s = 0, count = 0;
    for (int c = 0; c < C; ++c)
        for (std::size_t p = 0; p < P; ++p) {
            const std::size_t i = c * P + p;
            if (!(sigma_sum[i] > 0)) continue;
            count += 1;
            s += (1 - m_c.values[p]) * double(variation[i]);
        }
    return count > 0 ? s / count : 0.0;
}

std::vector<IndependenceReport> part_independence(const Encoder& e, const Generator& g, const ImageBatch& x,
                                                  const std::vector<PartRegion>& parts,
                                                  const IndependenceOptions& opts) {
    require(x.batch() == 1, ErrorCode::InvalidArgument, "part_independence takes a single image");
    require(!parts.empty(), ErrorCode::EmptyInput, "part_independence: no parts");
    require(opts.n_replacements >= 2 && opts.repeats >= 1, ErrorCode::InvalidArgument,
            "part_independence needs N >= 2 and repeats >= 1");
    for (const PartRegion& p : parts)
        require(p.mask.batch() == 1 && p.mask.height() == x.height() && p.mask.width() == x.width(),
                ErrorCode::ShapeMismatch, "part mask for '" + p.component_id + "' does not match the image");
    const int N = opts.n_replacements;
    const std::size_t K = parts.size();
    const Shape map_shape{x.channels(), x.height(), x.width()};

    std::vector<IndependenceReport> reports(K);
    for (std::size_t c = 0; c < K; ++c) {
        reports[c].component_id = parts[c].component_id;
        reports[c].sigma_map = Tensor(map_shape);
        reports[c].variation_map = Tensor(map_shape);
        reports[c].n_replacements = N;
        reports[c].n_repeats = opts.repeats;
    }
    const ImageBatch x_rep(x.values.slice(0, 1));
    const Mask ones = Mask::ones(N, x.height(), x.width());
    for (int r = 0; r < opts.repeats; ++r) {
        Rng rng = substream(opts.seed, "independence", static_cast<std::uint64_t>(r));
        const ImageBatch donors = generate(g, sample_latent(g.latent_spec(), N, rng));
        std::vector<Tensor> sigma;
        for (std::size_t c = 0; c < K; ++c) {
            ImageBatch inputs;
            if (opts.full_swap) {
                inputs = donors;
            } else {
                const Mask mc = parts[c].mask.repeat(N);
                inputs.values = apply_mask(donors, mc).values;
                const ImageBatch context(concat(std::vector<ImageBatch>(static_cast<std::size_t>(N), x_rep)).values);
                inputs.values += apply_mask(context, invert_mask(mc)).values;
            }
            const LatentCode z = e.config().input_channels == 4 ? e.encode(inputs, &ones) : e.encode(inputs, nullptr);
            sigma.push_back(pixel_std(generate(g, decoder_input(z)).values));
        }
        const std::vector<Tensor> v = variation_maps(sigma);
        Tensor sum(map_shape);
        for (const Tensor& s : sigma) sum += s;
        for (std::size_t c = 0; c < K; ++c) {
            reports[c].sigma_map += sigma[c];
            reports[c].variation_map += v[c];
            reports[c].score += independence_score(v[c], parts[c].mask, sum);
        }
    }
    const Real inv = Real(1) / static_cast<Real>(opts.repeats);
    for (IndependenceReport& rep : reports) {
        rep.sigma_map *= inv;
        rep.variation_map *= inv;
        rep.score /= opts.repeats;
    }
    return reports;
}

// ---------------------------------------------------------------------------

LatentCode edit_latent(const Encoder& e, const ImageBatch& x1, const ImageBatch& x1_modified, const ImageBatch& x2) {
    require_same_shape(x1.values, x1_modified.values, "edit_vector_transfer");
    require(x2.batch() == x1.batch() || x1.batch() == 1, ErrorCode::ShapeMismatch,
            "edit_vector_transfer: batch sizes differ");
    const LatentCode a = encode_full(e, x1);
    const LatentCode b = encode_full(e, x1_modified);
    LatentCode out = encode_full(e, x2);
    const std::size_t D = out.values.sample_size();
    for (int n = 0; n < out.batch(); ++n) {
        const int src = x1.batch() == 1 ? 0 : n;
        Real* o = out.values.sample(n);
        const Real* av = a.values.sample(src);
        const Real* bv = b.values.sample(src);
        for (std::size_t i = 0; i < D; ++i) o[i] = (bv[i] - av[i]) + o[i];
    }
    return out;
}

ImageBatch edit_vector_transfer(const Encoder& e, const Generator& g, const ImageBatch& x1,
                                const ImageBatch& x1_modified, const ImageBatch& x2) {
    return generate(g, decoder_input(edit_latent(e, x1, x1_modified, x2)));
}

FinetuneResult finetune_encoder(const Encoder& e, const Generator& g, const ImageBatch& x,
                                const FinetuneOptions& opts) {
    require(opts.steps >= 0, ErrorCode::InvalidArgument, "finetune steps must be >= 0");
    require(opts.weights.latent == 0, ErrorCode::InvalidArgument, "finetuning has no latent target");
    const Mask ones = Mask::ones(x.batch(), x.height(), x.width());
    auto recon_l1 = [&](const Encoder& enc) {
        return masked_l1(x, generate(g, decoder_input(encode_full(enc, x))), ones);
    };
    Encoder work = e;
    FinetuneResult r{work, recon_l1(work), 0};
    r.final_l1 = r.initial_l1;
    nn::Adam adam(std::as_const(work).params(), nn::Adam::Options{.lr = opts.lr});
    for (int step = 1; step <= opts.steps; ++step) {
        std::vector<Tensor> grads = work.zero_grads();
        const LossBreakdown loss = weighted_loss(work, g, x, nullptr, &ones, opts.weights, &grads);
        for (const Tensor& gr : grads)
            require(gr.all_finite(), ErrorCode::TrainingDiverged, "non-finite gradient at finetune step " + std::to_string(step));
        require(std::isfinite(loss.total), ErrorCode::TrainingDiverged,
                "non-finite loss at finetune step " + std::to_string(step));
        adam.step(work.params(), grads);
        const double l1 = recon_l1(work);
        require(std::isfinite(l1), ErrorCode::TrainingDiverged, "non-finite reconstruction at finetune step " + std::to_string(step));
        if (l1 < r.final_l1) {
            r.final_l1 = l1;
            r.encoder = work;
        }
    }
    return r;
}

}  // namespace LATCOMP_ABI
}  // namespace latcomp
