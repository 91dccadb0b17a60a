#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "latcomp/generators.hpp"
#include "latcomp/regressor.hpp"

namespace testutil {

using namespace latcomp;

inline std::shared_ptr<const ProceduralGenerator> oracle(int res = 16, LatentSpec spec = LatentSpec::per_layer(20, 1),
                                                         std::uint64_t seed = 1) {
    return build_procedural_generator(spec, {3, res, res}, seed);
}

inline EncoderConfig small_encoder_config(const LatentSpec& spec, int res = 16, int channels = 4) {
    EncoderConfig c;
    c.resolution = res;
    c.base_channels = 4;
    c.hidden = 16;
    c.input_channels = channels;
    c.latent_spec = spec;
    c.seed = 2;
    return c;
}

inline ImageBatch random_image(int n, int c, int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1, 1);
    Tensor t({n, c, h, w});
    for (Real& v : t.values()) v = static_cast<Real>(u(rng));
    return ImageBatch(t);
}

inline Mask random_mask(int n, int h, int w, std::uint64_t seed, double p = 0.5) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution b(p);
    Tensor t({n, 1, h, w});
    for (Real& v : t.values()) v = b(rng) ? 1 : 0;
    return Mask(t);
}

/// Fresh empty directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("latcomp-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace testutil
