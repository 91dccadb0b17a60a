#include "gradient_probe.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "latcomp/masking.hpp"
#include "latcomp/regressor.hpp"

static_assert(sizeof(latcomp::Real) == 8, "the gradient probe must be compiled against the float64 build");

using namespace latcomp;

namespace {

double probe_case(const LatentSpec& spec, const LossWeights& w, bool masked, int count, unsigned seed) {
    constexpr int kRes = 16;
    const auto g = build_procedural_generator(spec, {3, kRes, kRes}, seed);
    EncoderConfig cfg;
    cfg.resolution = kRes;
    cfg.base_channels = 4;
    cfg.hidden = 16;
    cfg.latent_spec = spec;
    cfg.loss_weights = w;
    cfg.seed = seed;
    Encoder e(cfg);
    const LatentCode z = sample_latent(spec, 2, seed + 1);
    const ImageBatch x = generate(*g, z);
    const Mask m = masked ? sample_mask(kRes, kRes, 2, MaskSamplerOptions{}, seed + 2) : Mask::ones(2, kRes, kRes);

    std::vector<Tensor> grads = e.zero_grads();
    total_loss(e, *g, x, z, &m, &grads);

    // Probe coordinates with a gradient that is not numerically zero.
    std::vector<std::pair<std::size_t, std::size_t>> candidates;
    for (std::size_t t = 0; t < grads.size(); ++t)
        for (std::size_t i = 0; i < grads[t].size(); ++i)
            if (std::abs(grads[t][i]) > 1e-6) candidates.emplace_back(t, i);
    std::mt19937_64 rng(seed);
    std::shuffle(candidates.begin(), candidates.end(), rng);
    candidates.resize(std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(count)));

    constexpr double h = 1e-6;
    double worst = candidates.empty() ? 1.0 : 0.0;
    for (const auto& [t, i] : candidates) {
        Tensor& p = *e.params()[t];
        const double orig = p[i];
        p[i] = orig + h;
        const double up = total_loss(e, *g, x, z, &m).total;
        p[i] = orig - h;
        const double down = total_loss(e, *g, x, z, &m).total;
        p[i] = orig;
        const double numeric = (up - down) / (2 * h);
        const double analytic = grads[t][i];
        const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-12});
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace

GradientProbeSummary run_gradient_probe(int params_per_case, unsigned seed) {
    GradientProbeSummary s;
    const std::pair<const char*, LossWeights> weights[] = {
        {"full", {1, 1, 1}}, {"no-latent", {1, 1, 0}}, {"no-perceptual", {1, 0, 1}}};
    const std::pair<const char*, LatentSpec> specs[] = {{"W+", LatentSpec::per_layer(20, 2)},
                                                        {"Z", LatentSpec::spherical(24)}};
    unsigned k = 0;
    for (const auto& [sname, spec] : specs)
        for (const auto& [wname, w] : weights)
            for (bool masked : {false, true}) {
                GradientProbeCase c;
                c.name = std::string(sname) + "/" + wname + (masked ? "/masked" : "/full-mask");
                c.max_rel_error = probe_case(spec, w, masked, params_per_case, seed + 31 * k++);
                c.probed = params_per_case;
                s.cases.push_back(c);
            }
    return s;
}

double cosine_fixture_error() {
    const LatentSpec spec = LatentSpec::spherical(2);
    auto code = [&](std::vector<Real> v) { return LatentCode(spec, Tensor({static_cast<int>(v.size() / 2), 1, 2}, v)); };
    const LatentCode z = code({1, 0, 1, 0, 1, 0});
    const LatentCode z_hat = code({3, 0, -2, 0, 0.5, 0.5});
    const auto loss = latent_loss_cosine(z, z_hat);
    const double expected[] = {0.0, 2.0, 1.0 - std::sqrt(2.0) / 2.0};
    double worst = 0;
    for (int i = 0; i < 3; ++i) worst = std::max(worst, std::abs(loss[static_cast<std::size_t>(i)] - expected[i]));
    return worst;
}
