#include <doctest.h>

#include <cmath>

#include "helpers.hpp"

using namespace latcomp;
using testutil::oracle;

TEST_CASE("sample_latent is reproducible and unit-norm for SPHERICAL_Z") {
    const LatentSpec spec = LatentSpec::spherical(24);
    const LatentCode a = sample_latent(spec, 5, 9), b = sample_latent(spec, 5, 9), c = sample_latent(spec, 5, 10);
    CHECK(a.values == b.values);
    CHECK_FALSE(a.values == c.values);
    for (int n = 0; n < 5; ++n) {
        double s = 0;
        for (int i = 0; i < 24; ++i) s += double(a.values.sample(n)[i]) * a.values.sample(n)[i];
        CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-6));
    }
    CHECK(a.values.shape() == Shape{5, 1, 24});
}

TEST_CASE("latent spec validation") {
    CHECK_THROWS_AS(LatentSpec::spherical(0).validate(), Error);
    CHECK_NOTHROW(LatentSpec::per_layer(8, 4).validate());
    CHECK(latent_spec_from_json(latent_spec_to_json(LatentSpec::per_layer(8, 4))) == LatentSpec::per_layer(8, 4));
    CHECK(parse_latent_kind(latent_kind_name(LatentKind::SphericalZ)) == LatentKind::SphericalZ);
}

TEST_CASE("generate rejects a mismatched latent spec") {
    const auto g = oracle();
    const LatentCode wrong = sample_latent(LatentSpec::per_layer(21, 1), 1, 1);
    try {
        generate(*g, wrong);
        FAIL("expected SPEC_MISMATCH");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SpecMismatch);
    }
}

TEST_CASE("procedural output is a pure function of z and stays in [-1, 1]") {
    const auto g = oracle(24);
    const LatentCode z = sample_latent(g->latent_spec(), 4, 3);
    const ImageBatch a = generate(*g, z), b = generate(*g, z);
    CHECK(a.values == b.values);
    CHECK(a.values.min() >= -1);
    CHECK(a.values.max() <= 1);
    CHECK(a.values.shape() == Shape{4, 3, 24, 24});
}

TEST_CASE("SPHERICAL_Z procedural output is scale invariant through the decoder boundary") {
    // No internal normalisation here, so the boundary normalisation carries it.
    const auto g = oracle(16, LatentSpec::spherical(24));
    const LatentCode z = sample_latent(g->latent_spec(), 2, 5);
    LatentCode scaled = z;
    scaled.values *= Real(3.5);
    CHECK(max_abs_diff(generate(*g, decoder_input(z)).values, generate(*g, decoder_input(scaled)).values) < 1e-5);
    CHECK(max_abs_diff(decoder_input(scaled).values, z.values) < 1e-6);
}

TEST_CASE("toy generator with pixel norm is invariant to latent scale") {
    ToyGeneratorConfig c;
    c.latent = LatentSpec::spherical(16);
    c.base_channels = 8;
    nn::Sequential net = build_toy_generator_net(c);
    Rng rng(4);
    nn::init_he(net, rng);
    const ToyGenerator g(c, std::move(net));
    const LatentCode z = sample_latent(c.latent, 2, 6);
    LatentCode scaled = z;
    scaled.values *= Real(0.25);
    CHECK(max_abs_diff(generate(g, z).values, generate(g, scaled).values) < 1e-5);
    CHECK(g.output_shape() == ImageShape{3, 32, 32});
}

TEST_CASE("disjoint latent blocks touch disjoint pixels") {
    const auto g = oracle(32);
    // Pick a scene where building and tree do not overlap so the supports
    // are separable.
    LatentCode z;
    for (std::uint64_t s = 0;; ++s) {
        z = sample_latent(g->latent_spec(), 1, 100 + s);
        const Mask b = g->part_support(z, "building", Real(0.05)), t = g->part_support(z, "tree", Real(0.05));
        bool overlap = false;
        for (std::size_t i = 0; i < b.values.size(); ++i) overlap |= b.values[i] > 0 && t.values[i] > 0;
        if (!overlap && b.count_ones() > 0 && t.count_ones() > 0) break;
        REQUIRE(s < 500);
    }
    const ImageBatch base = generate(*g, z);
    auto changed = [&](int begin, int end) {
        LatentCode p = z;
        for (int i = begin; i < end; ++i) p.values[std::size_t(i)] += Real(0.05);
        const ImageBatch x = generate(*g, p);
        Mask m = Mask::zeros(1, 32, 32);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 32; ++y)
                for (int w = 0; w < 32; ++w)
                    if (x.values.at(0, c, y, w) != base.values.at(0, c, y, w)) m.values.at(0, 0, y, w) = 1;
        return m;
    };
    const Mask building = changed(SceneBlocks::kBuildingBegin, SceneBlocks::kTreeBegin);
    const Mask tree = changed(SceneBlocks::kTreeBegin, SceneBlocks::kUsed);
    CHECK(building.count_ones() > 0);
    CHECK(tree.count_ones() > 0);
    for (std::size_t i = 0; i < building.values.size(); ++i) CHECK_FALSE((building.values[i] > 0 && tree.values[i] > 0));
}

TEST_CASE("visible part masks cover nearly the whole canvas without overlap") {
    const auto g = oracle(32);
    const LatentCode z = sample_latent(g->latent_spec(), 3, 8);
    std::size_t covered = 0;
    Tensor count({3, 1, 32, 32});
    for (const auto& p : ProceduralGenerator::kParts) count += g->part_mask(z, p).values;
    for (Real v : count.values()) {
        CHECK(v <= 1);
        covered += v > 0 ? 1 : 0;
    }
    CHECK(double(covered) / count.size() > 0.95);
}

TEST_CASE("generator checkpoints round trip bit-exactly") {
    testutil::TempDir dir("gen");
    const auto g = oracle(16, LatentSpec::spherical(24), 7);
    save_generator(*g, dir.path / "proc");
    const GeneratorHandle back = load_generator(dir.path / "proc");
    const LatentCode z = sample_latent(g->latent_spec(), 3, 1);
    CHECK(back->kind() == GeneratorKind::ProceduralOracle);
    CHECK(back->checksum() == g->checksum());
    CHECK(generate(*back, z).values == generate(*g, z).values);

    ToyGeneratorConfig c;
    c.latent = LatentSpec::per_layer(8, 1);
    c.base_channels = 8;
    nn::Sequential net = build_toy_generator_net(c);
    Rng rng(1);
    nn::init_he(net, rng);
    const ToyGenerator toy(c, std::move(net));
    save_generator(toy, dir.path / "toy");
    const GeneratorHandle toy_back = load_generator(dir.path / "toy");
    const LatentCode w = sample_latent(c.latent, 2, 2);
    CHECK(toy_back->checksum() == toy.checksum());
    CHECK(generate(*toy_back, w).values == generate(toy, w).values);
}

TEST_CASE("toy adversarial training stays stable on the rectangles dataset") {
    ToyGeneratorConfig c;
    c.latent = LatentSpec::spherical(16);
    c.base_channels = 8;
    c.steps = 60;
    c.batch_size = 8;
    c.seed = 3;
    const ToyTrainResult r = train_toy_generator(rectangles_dataset(32, 1), c);
    REQUIRE(r.history.size() == 60);
    for (const auto& h : r.history) {
        CHECK(std::isfinite(h.discriminator));
        CHECK(std::isfinite(h.generator));
    }
    CHECK(r.history.back().discriminator > 0);
    CHECK(r.history.back().discriminator < 2 * std::log(2.0) + 1);
}
