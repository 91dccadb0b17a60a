#include <doctest.h>

#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "latcomp/training.hpp"

using namespace latcomp;
using testutil::small_encoder_config;

namespace {

TrainConfig tiny_config() {
    TrainConfig c;
    c.steps = 4;
    c.batch_size = 4;
    c.learning_rate = Real(1e-3);
    c.seed = 3;
    return c;
}

}  // namespace

TEST_CASE("train config JSON round trip and validation") {
    TrainConfig c = tiny_config();
    c.ablation = Ablation::NoPerceptual;
    c.mask.patch_size = 4;
    const TrainConfig back = train_config_from_json(train_config_to_json(c));
    CHECK(back.steps == 4);
    CHECK(back.ablation == Ablation::NoPerceptual);
    CHECK(back.mask.patch_size == 4);
    CHECK(back.learning_rate == c.learning_rate);
    c.mask_probability = Real(1.5);
    CHECK_THROWS_AS(c.validate(), Error);
    for (Ablation a : {Ablation::Full, Ablation::NoLatent, Ablation::NoPerceptual, Ablation::NoMask})
        CHECK(parse_ablation(ablation_name(a)) == a);
    CHECK_THROWS_AS(parse_ablation("NOPE"), Error);
}

TEST_CASE("ablations map onto encoder configs and mask probability") {
    const EncoderConfig base = small_encoder_config(LatentSpec::spherical(24));
    CHECK(ablated_encoder_config(base, Ablation::NoLatent).loss_weights.latent == 0);
    CHECK(ablated_encoder_config(base, Ablation::NoPerceptual).loss_weights.perceptual == 0);
    CHECK(ablated_encoder_config(base, Ablation::NoMask).input_channels == 3);
    CHECK(ablated_encoder_config(base, Ablation::Full).input_channels == 4);
    TrainConfig c = tiny_config();
    CHECK(effective_mask_probability(c) == c.mask_probability);
    c.ablation = Ablation::NoMask;
    CHECK(effective_mask_probability(c) == 0);
}

TEST_CASE("training batches depend only on (seed, step)") {
    const auto g = testutil::oracle();
    const TrainConfig c = tiny_config();
    const TrainBatch a = draw_train_batch(*g, c, 2), b = draw_train_batch(*g, c, 2), d = draw_train_batch(*g, c, 3);
    CHECK(a.z.values == b.z.values);
    CHECK(a.m == b.m);
    CHECK_FALSE(a.z.values == d.z.values);
    CHECK(a.x.values == generate(*g, a.z).values);

    TrainConfig no_mask = c;
    no_mask.ablation = Ablation::NoMask;
    CHECK(draw_train_batch(*g, no_mask, 2).m == Mask::ones(4, 16, 16));
}

TEST_CASE("resumed training matches an uninterrupted run exactly") {
    const auto g = testutil::oracle();
    const EncoderConfig ec = small_encoder_config(g->latent_spec());
    const TrainConfig c = tiny_config();

    TrainState straight(Encoder(ec), c.learning_rate);
    train(straight, *g, c);

    testutil::TempDir dir("resume");
    TrainConfig half = c;
    half.steps = 2;
    TrainState first(Encoder(ec), c.learning_rate);
    train(first, *g, half);
    save_train_state(first, c, dir.path);
    TrainState resumed = load_train_state(dir.path);
    CHECK(resumed.step == 2);
    train(resumed, *g, c);

    CHECK(resumed.encoder.checksum() == straight.encoder.checksum());
    CHECK(resumed.loss_history == straight.loss_history);
    CHECK(resumed.encoder.step_count() == 4);
}

TEST_CASE("train writes checkpoints and the loss history") {
    const auto g = testutil::oracle();
    testutil::TempDir dir("train-out");
    TrainConfig c = tiny_config();
    c.checkpoint_every = 2;
    TrainOptions o;
    o.out_dir = dir.path;
    const TrainResult r = train(*g, small_encoder_config(g->latent_spec()), c, o);
    CHECK(r.loss_history.size() == 4);
    CHECK(fs::exists(checkpoint_dir(dir.path, 2) / "meta.json"));
    CHECK(fs::exists(checkpoint_dir(dir.path, 4) / "meta.json"));
    CHECK(checkpoint_dir(dir.path, 2).filename() == "step_00000002");
    std::ifstream in(dir.path / "loss_history.jsonl");
    int lines = 0;
    for (std::string line; std::getline(in, line);) {
        const Json j = Json::parse(line);
        CHECK(j.at("step").get<int>() == ++lines);
        CHECK(std::isfinite(j.at("total").get<double>()));
    }
    CHECK(lines == 4);
}

TEST_CASE("a non-finite loss raises TRAINING_DIVERGED") {
    const auto g = testutil::oracle();
    Encoder e(small_encoder_config(g->latent_spec()));
    (*e.params()[0])[0] = std::nan("");
    TrainState s(std::move(e), Real(1e-3));
    try {
        train_step(s, *g, tiny_config());
        FAIL("expected TRAINING_DIVERGED");
    } catch (const Error& err) {
        CHECK(err.code() == ErrorCode::TrainingDiverged);
    }
}

TEST_CASE("a few training steps reduce the loss on a fixed batch") {
    const auto g = testutil::oracle();
    TrainConfig c = tiny_config();
    c.steps = 40;
    c.learning_rate = Real(3e-3);
    const EncoderConfig ec = small_encoder_config(g->latent_spec());
    const TrainBatch b = draw_train_batch(*g, c, 1000);
    const double before = total_loss(Encoder(ec), *g, b.x, b.z, &b.m).total;
    const TrainResult r = train(*g, ec, c);
    CHECK(total_loss(r.encoder, *g, b.x, b.z, &b.m).total < before);
}
