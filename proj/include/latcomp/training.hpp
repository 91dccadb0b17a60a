#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "latcomp/masking.hpp"
#include "latcomp/nn.hpp"
#include "latcomp/regressor.hpp"

namespace latcomp {
inline namespace LATCOMP_ABI {

enum class Ablation { Full, NoLatent, NoPerceptual, NoMask };

std::string ablation_name(Ablation a);
Ablation parse_ablation(const std::string& name);

struct TrainConfig {
    int steps = 2000;
    int batch_size = 16;
    Real learning_rate = Real(1e-4);
    Real mask_probability = Real(0.5);  // chance a batch element gets a sampled mask
    std::uint64_t seed = 0;
    Ablation ablation = Ablation::Full;
    MaskSamplerOptions mask;
    int checkpoint_every = 0;  // 0 = only the final checkpoint

    void validate() const;
};

Json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j);

/// Encoder config with the ablation applied: NO_LATENT / NO_PERCEPTUAL zero a
/// loss weight, NO_MASK drops the mask channel.
EncoderConfig ablated_encoder_config(EncoderConfig base, Ablation a);
/// NO_MASK trains on full images only, like a plain RGB regressor.
Real effective_mask_probability(const TrainConfig& c);

struct LossRecord {
    std::int64_t step = 0;  // 1-based index of the update that produced it
    double total = 0, mse = 0, perceptual = 0, latent = 0;
    friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

Json loss_record_to_json(const LossRecord& r);

struct TrainState {
    Encoder encoder;
    nn::Adam optimizer;
    std::int64_t step = 0;
    std::vector<LossRecord> loss_history;

    explicit TrainState(Encoder e, Real learning_rate);
};

/// The training batch for `step`: z ~ p(z), x = G(z), masks. Depends only on
/// (seed, step), which is what makes resumption exact.
struct TrainBatch {
    LatentCode z;
    ImageBatch x;
    Mask m;
};
TrainBatch draw_train_batch(const Generator& g, const TrainConfig& config, std::int64_t step);

/// One Adam update of the encoder on a fresh batch. Throws TRAINING_DIVERGED
/// (with the step index) on a non-finite loss or gradient.
void train_step(TrainState& state, const Generator& g, const TrainConfig& config);

void save_train_state(const TrainState& state, const TrainConfig& config, const fs::path& dir);
/// Restores encoder, optimizer moments, step and history.
TrainState load_train_state(const fs::path& dir);

struct TrainOptions {
    std::optional<fs::path> out_dir;  // checkpoints/ and loss_history.jsonl go here
    std::function<void(const TrainState&)> on_step;
};

/// Runs train_step until state.step == config.steps. Verifies the generator
/// checksum is unchanged afterwards.
void train(TrainState& state, const Generator& g, const TrainConfig& config, const TrainOptions& options = {});

struct TrainResult {
    Encoder encoder;
    std::vector<LossRecord> loss_history;
};

/// Fresh run: builds the (ablated) encoder and trains it.
TrainResult train(const Generator& g, const EncoderConfig& encoder_config, const TrainConfig& config,
                  const TrainOptions& options = {});

fs::path checkpoint_dir(const fs::path& out_dir, std::int64_t step);

}  // namespace LATCOMP_ABI
}  // namespace latcomp
