#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "gradient_probe.hpp"
#include "latcomp/generators.hpp"
#include "latcomp/nn.hpp"
#include "latcomp/regressor.hpp"

static_assert(sizeof(latcomp::Real) == 8);

using namespace latcomp;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed, double scale = 1) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0, scale);
    Tensor t(std::move(s));
    for (double& v : t.values()) v = nd(rng);
    return t;
}

Tensor uniform_tensor(Shape s, std::uint64_t seed, double bound) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor t(std::move(s));
    for (double& v : t.values()) v = u(rng);
    return t;
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

/// Checks input and parameter gradients of <r, net(x)> by central differences.
void check_network(nn::Sequential net, Shape in_shape, double tol = 1e-6) {
    Rng rng(5);
    nn::init_he(net, rng);
    // Non-zero biases so their gradients are exercised.
    for (Tensor* p : net.params())
        if (p->rank() == 1)
            for (double& v : p->values()) v = std::normal_distribution<double>(0, 0.1)(rng);
    const Tensor x = random_tensor(in_shape, 1);
    nn::Cache cache;
    const Tensor y = net.forward(x, &cache);
    const Tensor r = random_tensor(y.shape(), 2);
    std::vector<Tensor> grads = net.zero_grads();
    const Tensor gx = net.backward(r, cache, grads, true);
    const double h = 1e-6;
    auto f = [&] { return dot(r, net.forward(x, nullptr)); };
    Tensor xp = x;
    for (std::size_t i = 0; i < x.size(); i += std::max<std::size_t>(1, x.size() / 13)) {
        xp[i] = x[i] + h;
        const double up = dot(r, net.forward(xp, nullptr));
        xp[i] = x[i] - h;
        const double down = dot(r, net.forward(xp, nullptr));
        xp[i] = x[i];
        CHECK(rel_err((up - down) / (2 * h), gx[i]) < tol);
    }
    auto params = net.params();
    for (std::size_t t = 0; t < params.size(); ++t) {
        Tensor& p = *params[t];
        for (std::size_t i = 0; i < p.size(); i += std::max<std::size_t>(1, p.size() / 7)) {
            const double orig = p[i];
            p[i] = orig + h;
            const double up = f();
            p[i] = orig - h;
            const double down = f();
            p[i] = orig;
            CHECK(rel_err((up - down) / (2 * h), grads[t][i]) < tol);
        }
    }
}

/// vector-Jacobian product of a generator against central differences.
void check_generator(const Generator& g, const LatentCode& z, double h, double tol) {
    const GeneratorTrace tr = g.trace(z);
    const Tensor r = random_tensor(tr.image.values.shape(), 9);
    const Tensor gz = tr.pullback(r);
    REQUIRE(gz.shape() == z.values.shape());
    for (std::size_t i = 0; i < z.values.size(); ++i) {
        LatentCode p = z;
        p.values[i] = z.values[i] + h;
        const double up = dot(r, g.generate(p).values);
        p.values[i] = z.values[i] - h;
        const double down = dot(r, g.generate(p).values);
        CHECK(rel_err((up - down) / (2 * h), gz[i]) < tol);
    }
}

}  // namespace

TEST_CASE("layer gradients") {
    SUBCASE("conv") {
        nn::Sequential n;
        n.add<nn::Conv2d>(2, 3, 3, 1, 1).add<nn::Conv2d>(3, 2, 4, 2, 1);
        check_network(std::move(n), {2, 2, 6, 6});
    }
    SUBCASE("transposed conv") {
        nn::Sequential n;
        n.add<nn::ConvTranspose2d>(3, 2, 4, 2, 1);
        check_network(std::move(n), {2, 3, 3, 3});
    }
    SUBCASE("linear, activations, reshape") {
        nn::Sequential n;
        n.add<nn::Reshape>(Shape{12}).add<nn::Linear>(12, 6).add<nn::LeakyRelu>(0.2).add<nn::Linear>(6, 4).add<nn::Tanh>();
        check_network(std::move(n), {3, 3, 2, 2});
    }
    SUBCASE("pixel norm and pooling") {
        nn::Sequential n;
        n.add<nn::PixelNorm>().add<nn::Conv2d>(4, 3, 3, 1, 1).add<nn::AvgPool2>().add<nn::GlobalAvgPool>();
        check_network(std::move(n), {2, 4, 4, 4});
    }
    SUBCASE("residual") {
        nn::Sequential body;
        body.add<nn::Conv2d>(3, 3, 3, 1, 1).add<nn::LeakyRelu>(0.2).add<nn::Conv2d>(3, 3, 3, 1, 1);
        nn::Sequential n;
        n.add<nn::Residual>(std::move(body));
        check_network(std::move(n), {1, 3, 4, 4});
    }
}

TEST_CASE("procedural generator Jacobian matches central differences") {
    {
        const auto g = build_procedural_generator(LatentSpec::per_layer(20, 1), {3, 24, 24}, 4);
        check_generator(*g, sample_latent(g->latent_spec(), 2, 6), 1e-3, 1e-4);
    }
    // The edge ramps are 1.5 px wide, so the truncation error of a 1e-3 step
    // grows with resolution and with the SPHERICAL_Z coordinate scale; a
    // smaller step checks the same tolerance everywhere.
    for (const LatentSpec spec : {LatentSpec::per_layer(20, 1), LatentSpec::spherical(24)})
        for (int res : {24, 64}) {
            const auto g = build_procedural_generator(spec, {3, res, res}, 4);
            check_generator(*g, sample_latent(spec, 2, 6), 1e-5, 1e-4);
        }
}

TEST_CASE("toy generator Jacobian matches central differences") {
    ToyGeneratorConfig c;
    c.latent = LatentSpec::spherical(8);
    c.base_channels = 4;
    nn::Sequential net = build_toy_generator_net(c);
    Rng rng(2);
    nn::init_he(net, rng);
    const ToyGenerator g(c, std::move(net));
    check_generator(g, sample_latent(c.latent, 1, 3), 1e-6, 1e-5);
}

TEST_CASE("normalize_latent backward") {
    const LatentSpec spec = LatentSpec::spherical(5);
    const LatentCode z(spec, random_tensor({2, 1, 5}, 1));
    const Tensor r = random_tensor({2, 1, 5}, 2);
    const Tensor g = normalize_latent_backward(z, r);
    const double h = 1e-6;
    for (std::size_t i = 0; i < z.values.size(); ++i) {
        LatentCode p = z;
        p.values[i] += h;
        const double up = dot(r, normalize_latent(p).values);
        p.values[i] -= 2 * h;
        const double down = dot(r, normalize_latent(p).values);
        CHECK(rel_err((up - down) / (2 * h), g[i]) < 1e-6);
    }
}

TEST_CASE("latent loss gradients") {
    const double h = 1e-6;
    const std::vector<Real> weight = {0.7, 1.3};
    auto check = [&](const LatentCode& z, const LatentCode& zh, auto loss, auto grad) {
        const Tensor g = grad(z, zh, weight);
        for (std::size_t i = 0; i < zh.values.size(); ++i) {
            auto f = [&](double delta) {
                LatentCode p = zh;
                p.values[i] += delta;
                const auto l = loss(z, p);
                return weight[0] * l[0] + weight[1] * l[1];
            };
            CHECK(rel_err((f(h) - f(-h)) / (2 * h), g[i]) < 1e-6);
        }
    };
    const LatentSpec zs = LatentSpec::spherical(6);
    check(LatentCode(zs, random_tensor({2, 1, 6}, 1)), LatentCode(zs, random_tensor({2, 1, 6}, 2)),
          latent_loss_cosine, latent_loss_cosine_grad);
    const LatentSpec ws = LatentSpec::per_layer(3, 2);
    check(LatentCode(ws, random_tensor({2, 2, 3}, 3)), LatentCode(ws, random_tensor({2, 2, 3}, 4)), latent_loss_mse,
          latent_loss_mse_grad);
}

TEST_CASE("perceptual distance gradient") {
    const RandomFeaturePerceptual p;
    const ImageBatch x(uniform_tensor({2, 3, 8, 8}, 1, 0.9)), y(uniform_tensor({2, 3, 8, 8}, 2, 0.9));
    const std::vector<Real> w = {0.4, 1.1};
    const PerceptualTrace tr = p.trace(x, y);
    const Tensor g = tr.pullback(w);
    const double h = 1e-6;
    for (std::size_t i = 0; i < y.values.size(); i += 5) {
        auto f = [&](double d) {
            ImageBatch q = y;
            q.values[i] += d;
            const auto dist = p.distance(x, q);
            return w[0] * dist[0] + w[1] * dist[1];
        };
        CHECK(rel_err((f(h) - f(-h)) / (2 * h), g[i]) < 1e-5);
    }
}

TEST_CASE("encoder gradients of the total loss, every ablation weighting") {
    const GradientProbeSummary s = run_gradient_probe(6, 21);
    CHECK(s.cases.size() == 12);
    for (const auto& c : s.cases) {
        INFO(c.name);
        CHECK(c.max_rel_error < 1e-3);
    }
    CHECK(cosine_fixture_error() <= 1e-6);
}
