#include "latcomp/training.hpp"

#include <cmath>
#include <random>

namespace latcomp {
inline namespace LATCOMP_ABI {

std::string ablation_name(Ablation a) {
    switch (a) {
        case Ablation::Full: return "FULL";
        case Ablation::NoLatent: return "NO_LATENT";
        case Ablation::NoPerceptual: return "NO_PERCEPTUAL";
        case Ablation::NoMask: return "NO_MASK";
    }
    return "?";
}

Ablation parse_ablation(const std::string& name) {
    for (Ablation a : {Ablation::Full, Ablation::NoLatent, Ablation::NoPerceptual, Ablation::NoMask})
        if (ablation_name(a) == name) return a;
    fail(ErrorCode::InvalidArgument, "unknown ablation '" + name + "'");
}

void TrainConfig::validate() const {
    require(steps >= 1, ErrorCode::InvalidArgument, "steps must be >= 1");
    require(batch_size >= 1, ErrorCode::InvalidArgument, "batch_size must be >= 1");
    require(learning_rate >= 0 && std::isfinite(learning_rate), ErrorCode::InvalidArgument,
            "learning_rate must be finite and non-negative");
    require(mask_probability >= 0 && mask_probability <= 1, ErrorCode::InvalidArgument,
            "mask_probability must be in [0, 1]");
    require(checkpoint_every >= 0, ErrorCode::InvalidArgument, "checkpoint_every must be >= 0");
    mask.validate();
}

Json train_config_to_json(const TrainConfig& c) {
    Json mask = {{"patch_size", c.mask.patch_size},
                 {"threshold_lo", c.mask.threshold_lo},
                 {"threshold_hi", c.mask.threshold_hi}};
    if (c.mask.fixed_threshold) mask["fixed_threshold"] = *c.mask.fixed_threshold;
    return {{"steps", c.steps},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"mask_probability", c.mask_probability},
            {"seed", c.seed},
            {"ablation", ablation_name(c.ablation)},
            {"mask", mask},
            {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig train_config_from_json(const Json& j) {
    TrainConfig c;
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.mask_probability = j.value("mask_probability", c.mask_probability);
    c.seed = j.value("seed", c.seed);
    c.ablation = parse_ablation(j.value("ablation", std::string("FULL")));
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    if (j.contains("mask")) {
        const Json& m = j.at("mask");
        c.mask.patch_size = m.value("patch_size", c.mask.patch_size);
        c.mask.threshold_lo = m.value("threshold_lo", c.mask.threshold_lo);
        c.mask.threshold_hi = m.value("threshold_hi", c.mask.threshold_hi);
        if (m.contains("fixed_threshold")) c.mask.fixed_threshold = m.at("fixed_threshold").get<Real>();
    }
    c.validate();
    return c;
}

EncoderConfig ablated_encoder_config(EncoderConfig base, Ablation a) {
    switch (a) {
        case Ablation::Full: break;
        case Ablation::NoLatent: base.loss_weights.latent = 0; break;
        case Ablation::NoPerceptual: base.loss_weights.perceptual = 0; break;
        case Ablation::NoMask: base.input_channels = 3; break;
    }
    base.validate();
    return base;
}

Real effective_mask_probability(const TrainConfig& c) {
    return c.ablation == Ablation::NoMask ? Real(0) : c.mask_probability;
}

Json loss_record_to_json(const LossRecord& r) {
    return {{"step", r.step}, {"total", r.total}, {"mse", r.mse}, {"perceptual", r.perceptual}, {"latent", r.latent}};
}

namespace {

LossRecord loss_record_from_json(const Json& j) {
    return {j.at("step").get<std::int64_t>(), j.at("total").get<double>(), j.at("mse").get<double>(),
            j.at("perceptual").get<double>(), j.at("latent").get<double>()};
}

bool all_finite(const std::vector<Tensor>& ts) {
    for (const Tensor& t : ts)
        if (!t.all_finite()) return false;
    return true;
}

}  // namespace

TrainState::TrainState(Encoder e, Real learning_rate)
    : encoder(std::move(e)), optimizer(std::as_const(encoder).params(), nn::Adam::Options{.lr = learning_rate}) {}

TrainBatch draw_train_batch(const Generator& g, const TrainConfig& config, std::int64_t step) {
    Rng rng = substream(config.seed, "train", static_cast<std::uint64_t>(step));
    TrainBatch b;
    b.z = sample_latent(g.latent_spec(), config.batch_size, rng);
    b.x = generate(g, b.z);
    const ImageShape s = g.output_shape();
    const Real p = effective_mask_probability(config);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::vector<Mask> masks;
    for (int n = 0; n < config.batch_size; ++n) {
        if (coin(rng) < p) masks.push_back(sample_mask(s.height, s.width, 1, config.mask, rng));
        else masks.push_back(Mask::ones(1, s.height, s.width));
    }
    b.m = concat(std::span<const Mask>(masks));
    return b;
}

void train_step(TrainState& state, const Generator& g, const TrainConfig& config) {
    const std::int64_t step = state.step + 1;
    const TrainBatch batch = draw_train_batch(g, config, step);
    std::vector<Tensor> grads = state.encoder.zero_grads();
    LossBreakdown loss;
    try {
        loss = total_loss(state.encoder, g, batch.x, batch.z, &batch.m, &grads);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::NumericalFailure) throw;
        fail(ErrorCode::TrainingDiverged, "step " + std::to_string(step) + ": " + e.what());
    }
    require(std::isfinite(loss.total) && all_finite(grads), ErrorCode::TrainingDiverged,
            "non-finite loss or gradient at step " + std::to_string(step));
    state.optimizer.set_lr(config.learning_rate);
    state.optimizer.step(state.encoder.params(), grads);
    state.step = step;
    state.encoder.set_step_count(step);
    state.loss_history.push_back({step, loss.total, loss.mse, loss.perceptual, loss.latent});
}

void save_train_state(const TrainState& state, const TrainConfig& config, const fs::path& dir) {
    Checkpoint c = state.encoder.to_checkpoint();
    Json history = Json::array();
    for (const LossRecord& r : state.loss_history) history.push_back(loss_record_to_json(r));
    c.meta["training"] = {{"config", train_config_to_json(config)},
                          {"step", state.step},
                          {"adam_steps", state.optimizer.steps()},
                          {"loss_history", history}};
    const auto& m = state.optimizer.first_moments();
    const auto& v = state.optimizer.second_moments();
    for (std::size_t i = 0; i < m.size(); ++i) {
        c.tensors.push_back({"adam_m" + std::to_string(i), m[i]});
        c.tensors.push_back({"adam_v" + std::to_string(i), v[i]});
    }
    save_checkpoint(dir, c);
}

TrainState load_train_state(const fs::path& dir) {
    const Checkpoint c = load_checkpoint(dir);
    try {
        require(c.meta.contains("training"), ErrorCode::IoError, dir.string() + " holds no training state");
        const Json& t = c.meta.at("training");
        const TrainConfig config = train_config_from_json(t.at("config"));
        TrainState state(Encoder::from_checkpoint(c), config.learning_rate);
        state.step = t.at("step").get<std::int64_t>();
        state.optimizer.set_steps(t.at("adam_steps").get<long long>());
        auto& m = state.optimizer.first_moments();
        auto& v = state.optimizer.second_moments();
        for (std::size_t i = 0; i < m.size(); ++i) {
            m[i] = c.tensor("adam_m" + std::to_string(i));
            v[i] = c.tensor("adam_v" + std::to_string(i));
        }
        for (const Json& r : t.at("loss_history")) state.loss_history.push_back(loss_record_from_json(r));
        require(static_cast<std::int64_t>(state.loss_history.size()) == state.step, ErrorCode::IoError,
                dir.string() + ": loss history length does not match step");
        return state;
    } catch (const Json::exception& e) {
        fail(ErrorCode::IoError, dir.string() + ": corrupt training metadata: " + e.what());
    }
}

fs::path checkpoint_dir(const fs::path& out_dir, std::int64_t step) {
    char name[32];
    std::snprintf(name, sizeof(name), "step_%08lld", static_cast<long long>(step));
    return out_dir / "checkpoints" / name;
}

void train(TrainState& state, const Generator& g, const TrainConfig& config, const TrainOptions& options) {
    config.validate();
    require(state.encoder.config().latent_spec == g.latent_spec(), ErrorCode::SpecMismatch,
            "encoder latent spec " + state.encoder.config().latent_spec.summary() + " vs generator " +
                g.latent_spec().summary());
    const std::uint64_t frozen = g.checksum();
    while (state.step < config.steps) {
        train_step(state, g, config);
        if (options.on_step) options.on_step(state);
        if (options.out_dir && config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0)
            save_train_state(state, config, checkpoint_dir(*options.out_dir, state.step));
    }
    require(g.checksum() == frozen, ErrorCode::InvalidArgument, "generator parameters changed during training");
    if (options.out_dir) {
        save_train_state(state, config, checkpoint_dir(*options.out_dir, state.step));
        std::string lines;
        for (const LossRecord& r : state.loss_history) lines += loss_record_to_json(r).dump() + "\n";
        write_text_file(*options.out_dir / "loss_history.jsonl", lines);
    }
}

TrainResult train(const Generator& g, const EncoderConfig& encoder_config, const TrainConfig& config,
                  const TrainOptions& options) {
    TrainState state(Encoder(ablated_encoder_config(encoder_config, config.ablation)), config.learning_rate);
    train(state, g, config, options);
    return {std::move(state.encoder), std::move(state.loss_history)};
}

}  // namespace LATCOMP_ABI
}  // namespace latcomp
