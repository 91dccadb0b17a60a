#include <doctest.h>

#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "latcomp/pipeline.hpp"

using namespace latcomp;

TEST_CASE("make-collages layout and evaluation") {
    testutil::TempDir dir("collages");
    const auto g = testutil::oracle();
    const Encoder e(testutil::small_encoder_config(g->latent_spec()));
    MakeCollagesOptions o;
    o.count = 12;
    o.seed = 4;
    make_collages(g, e, o, dir.path);
    for (const char* sub : {"collages", "masks", "composites", "reencoded", "reference"})
        CHECK(list_pngs(dir.path / "samples" / sub).size() == 12);
    CHECK(find_manifest(dir.path) == dir.path / "samples" / "manifest.jsonl");

    std::ifstream in(dir.path / "samples" / "manifest.jsonl");
    int n = 0;
    for (std::string line; std::getline(in, line); ++n) {
        const Json j = Json::parse(line);
        CHECK(j.at("index").get<int>() == n);
        CHECK(j.at("preset") == "oracle");
        const double frac = j.at("union_fraction").get<double>();
        CHECK(frac > 0);
        CHECK(frac <= 1);
    }
    CHECK(n == 12);

    EvalOptions eo;
    eo.k = 3;
    const MetricsReport r = evaluate_collage_dir({}, dir.path, eo);
    CHECK(r.n_samples == 12);
    CHECK(std::isfinite(r.masked_l1));
    CHECK(std::isfinite(r.fid_delta));
    CHECK(r.coverage >= 0);
    CHECK(r.coverage <= 1);

    // Same seed, same collages.
    testutil::TempDir again("collages2");
    make_collages(g, e, o, again.path);
    CHECK(read_png_dir(again.path / "samples" / "collages").values ==
          read_png_dir(dir.path / "samples" / "collages").values);
}

TEST_CASE("evaluate_sets on a collage-identical subject has zero masked L1") {
    const ImageBatch ref = testutil::random_image(8, 3, 16, 16, 1);
    const ImageBatch subj = testutil::random_image(8, 3, 16, 16, 2);
    const Mask m = testutil::random_mask(8, 16, 16, 3, 0.7);
    EvalOptions eo;
    eo.k = 2;
    const MetricsReport r = evaluate_sets(ref, subj, ref, subj, m, eo);
    CHECK(r.masked_l1 == 0);
    CHECK(r.fid_delta == doctest::Approx(r.fid));
    CHECK(parse_eval_subject("collage") == EvalSubject::Collage);
    CHECK_THROWS_AS(parse_eval_subject("other"), Error);
}

TEST_CASE("trade-off points and plots") {
    MetricsReport a, b;
    a.masked_l1 = 0.1;
    a.fid_delta = 2;
    b.masked_l1 = 0.3;
    b.fid_delta = -1;
    const auto pts = tradeoff_points({{"refined", a}, {"encoder", b}});
    REQUIRE(pts.size() == 2);
    CHECK(pts[0].label == "refined");
    CHECK(pts[1].fid_delta == -1);
    const Json j = tradeoff_json(pts, a.extractor_id);
    CHECK(j["points"].size() == 2);
    const std::string svg = tradeoff_svg(pts);
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("refined") != std::string::npos);
    b.extractor_id = "other";
    try {
        tradeoff_points({{"a", a}, {"b", b}});
        FAIL("expected EXTRACTOR_MISMATCH");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ExtractorMismatch);
    }
}

TEST_CASE("run.json records the command, config, seed and version") {
    testutil::TempDir dir("run");
    write_run_json(dir.path, "eval", {{"k", 5}}, 99);
    const Json j = read_json_file(dir.path / "run.json");
    CHECK(j.at("command") == "eval");
    CHECK(j.at("seed") == 99);
    CHECK(j.at("config").at("k") == 5);
    CHECK(j.at("code_version") == code_version());
}
