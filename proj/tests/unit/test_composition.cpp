#include <doctest.h>

#include <set>

#include "helpers.hpp"
#include "latcomp/composition.hpp"
#include "latcomp/masking.hpp"

using namespace latcomp;

namespace {

ImageBatch flat(Real v, int res = 4) { return ImageBatch(Tensor({1, 3, res, res}, v)); }

Mask rect(int res, int y0, int y1, int x0, int x1) {
    Mask m = Mask::zeros(1, res, res);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) m.values.at(0, 0, y, x) = 1;
    return m;
}

}  // namespace

TEST_CASE("assemble_collage paints back to front") {
    CollageSpec spec;
    spec.canvas = {3, 4, 4};
    spec.layers.push_back({flat(Real(0.5)), rect(4, 0, 3, 0, 3), 1});
    spec.layers.push_back({flat(Real(-0.5)), rect(4, 1, 4, 1, 4), 0});
    const Collage c = assemble_collage(spec);
    // Overlap [1,3)x[1,3) belongs to the z_order 1 layer.
    CHECK(c.image.values.at(0, 0, 1, 1) == Real(0.5));
    CHECK(c.image.values.at(0, 2, 3, 3) == Real(-0.5));
    CHECK(c.image.values.at(0, 0, 0, 3) == 0);
    CHECK(c.mask.count_ones() == 9 + 9 - 4);
    CHECK(c.mask.values.at(0, 0, 0, 3) == 0);
}

TEST_CASE("collage spec validation") {
    CollageSpec spec;
    spec.canvas = {3, 4, 4};
    CHECK_THROWS_AS(spec.validate(), Error);
    spec.layers.push_back({flat(0, 5), rect(5, 0, 1, 0, 1), 0});
    CHECK_THROWS_AS(spec.validate(), Error);
}

TEST_CASE("collage spec JSON round trip preserves the assembled collage") {
    CollageSpec spec;
    spec.canvas = {3, 8, 8};
    spec.layers.push_back({quantize8(testutil::random_image(1, 3, 8, 8, 1)), rect(8, 0, 5, 0, 8), 0});
    spec.layers.push_back({quantize8(testutil::random_image(1, 3, 8, 8, 2)), rect(8, 3, 8, 2, 6), 2});
    const CollageSpec back = collage_spec_from_json(collage_spec_to_json(spec));
    CHECK(back.layers.size() == 2);
    CHECK(back.layers[1].z_order == 2);
    const Collage a = assemble_collage(spec), b = assemble_collage(back);
    CHECK(a.mask == b.mask);
    CHECK(max_abs_diff(a.image.values, b.image.values) < 1e-6);

    Json bad = collage_spec_to_json(spec);
    bad["layers"][0]["image"] = "not base64 png";
    CHECK_THROWS_AS(collage_spec_from_json(bad), Error);
}

TEST_CASE("collage spec paths resolve against the base dir") {
    testutil::TempDir dir("spec");
    const ImageBatch img = quantize8(testutil::random_image(1, 3, 8, 8, 3));
    const Mask m = rect(8, 2, 6, 2, 6);
    write_png(dir.path / "a.png", img);
    write_mask_png(dir.path / "m.png", m);
    const Json j = {{"canvas", {3, 8, 8}}, {"layers", {{{"image", "a.png"}, {"mask", "m.png"}, {"z_order", 0}}}}};
    const CollageSpec s = collage_spec_from_json(j, dir.path);
    CHECK(s.layers[0].part_mask == m);
    CHECK(max_abs_diff(s.layers[0].image.values, img.values) < 1e-6);
}

TEST_CASE("compose is G(E(collage, union))") {
    const auto g = testutil::oracle();
    const Encoder e(testutil::small_encoder_config(g->latent_spec()));
    CollageSpec spec;
    spec.canvas = g->output_shape();
    const ImageBatch x = generate(*g, sample_latent(g->latent_spec(), 2, 1));
    spec.layers.push_back({x.slice(0, 1), rect(16, 0, 16, 0, 8), 0});
    spec.layers.push_back({x.slice(1, 2), rect(16, 0, 16, 8, 16), 1});
    const Collage c = assemble_collage(spec);
    const ImageBatch expected = generate(*g, decoder_input(e.encode(c.image, &c.mask)));
    CHECK(compose(e, *g, spec).values == expected.values);
    const ComposeResult r = compose_detailed(e, *g, spec);
    CHECK(r.composite.values == expected.values);
    CHECK(r.collage.mask == Mask::ones(1, 16, 16));

    const Encoder rgb(testutil::small_encoder_config(g->latent_spec(), 16, 3));
    CHECK_THROWS_AS(compose(rgb, *g, spec), Error);
}

TEST_CASE("refinement fixtures") {
    const auto g = testutil::oracle();
    const LatentCode z = sample_latent(g->latent_spec(), 2, 3);
    const ImageBatch target = generate(*g, z);
    const Mask m = sample_mask(16, 16, 2, MaskSamplerOptions{}, 1);
    RefineOptions o;
    o.steps = 0;
    const LatentCode start = sample_latent(g->latent_spec(), 2, 4);
    const RefineResult zero = refine_latent(*g, start, target, m, o);
    CHECK(zero.latent.values == start.values);
    CHECK(zero.best_history.empty());

    o.steps = 10;
    const RefineResult fixed = refine_latent(*g, z, target, m, o);
    CHECK(fixed.latent.values == z.values);
    CHECK(fixed.objective[0] == 0);

    o.steps = 30;
    const RefineResult r = refine_latent(*g, start, target, m, o);
    REQUIRE(r.best_history.size() == 30);
    for (std::size_t i = 1; i < r.best_history.size(); ++i) CHECK(r.best_history[i] <= r.best_history[i - 1]);
    for (int n = 0; n < 2; ++n) CHECK(r.objective[std::size_t(n)] <= r.initial_objective[std::size_t(n)]);
    const auto check = masked_objective(*g, r.latent, target, m, o);
    CHECK(check[0] == doctest::Approx(r.objective[0]).epsilon(1e-4));
}

TEST_CASE("best-of-k initialisation picks the lowest objective candidate") {
    const auto g = testutil::oracle();
    const ImageBatch target = generate(*g, sample_latent(g->latent_spec(), 1, 3));
    const Mask m = Mask::ones(1, 16, 16);
    const LatentCode best = initial_latent(InitStrategy::BestOfK, nullptr, *g, target, m, 8, 5);
    const double chosen = masked_objective(*g, best, target, m)[0];
    const LatentCode one = initial_latent(InitStrategy::BestOfK, nullptr, *g, target, m, 1, 5);
    CHECK(chosen <= masked_objective(*g, one, target, m)[0]);
    CHECK_THROWS_AS(initial_latent(InitStrategy::Encoder, nullptr, *g, target, m, 1, 5), Error);
}

TEST_CASE("presets") {
    const auto names = preset_names();
    CHECK(std::set<std::string>(names.begin(), names.end()) ==
          std::set<std::string>{"car", "church", "face", "living_room", "oracle"});
    CHECK(preset("church").classes == std::vector<std::string>{"sky", "building", "tree", "foreground"});
    CHECK(preset("living_room").classes.front() == "floor");
    CHECK(preset("face").classes.back() == "hair");
    CHECK(preset("oracle").classes == ProceduralGenerator::kParts);
    CHECK_THROWS_AS(preset("bedroom"), Error);
}

TEST_CASE("random collages are deterministic and layered back to front") {
    const auto g = testutil::oracle(32);
    const OraclePartSource source(g);
    const RandomCollage a = random_collage(*g, source, preset("oracle"), 7);
    const RandomCollage b = random_collage(*g, source, preset("oracle"), 7);
    REQUIRE(a.spec.layers.size() == 3);
    CHECK(a.source_latents.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a.spec.layers[i].part_mask == b.spec.layers[i].part_mask);
        CHECK(a.spec.layers[i].z_order == int(i));
        CHECK(a.spec.layers[i].part_mask ==
              g->part_mask(a.source_latents[i], ProceduralGenerator::kParts[i]));
    }
    CHECK_FALSE(a.spec.layers[0].image.values == random_collage(*g, source, preset("oracle"), 8).spec.layers[0].image.values);
}

TEST_CASE("rectangle part source respects the side fractions") {
    const RectanglePartSource src(Real(0.25), Real(0.5));
    const ImageBatch img = testutil::random_image(1, 3, 40, 40, 1);
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
        const Mask m = src.part_mask("sky", img, nullptr, rng);
        const auto ones = m.count_ones();
        CHECK(ones >= 10 * 10);
        CHECK(ones <= 20 * 20);
    }
    std::vector<ImageBatch> pool = {img, testutil::random_image(1, 3, 40, 40, 2)};
    const RandomCollage c = random_collage(pool, src, preset("church"), 2);
    CHECK(c.spec.layers.size() == 4);
    CHECK(c.source_latents.empty());
}

TEST_CASE("user mask part source") {
    const Mask sky = rect(8, 0, 4, 0, 8);
    const UserMaskPartSource src({{"sky", sky}});
    Rng rng(1);
    const ImageBatch img = testutil::random_image(1, 3, 8, 8, 1);
    CHECK(src.part_mask("sky", img, nullptr, rng) == sky);
    CHECK_THROWS_AS(src.part_mask("tree", img, nullptr, rng), Error);
}
