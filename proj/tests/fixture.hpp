#pragma once

// Synthetic fixture shared by the trainer tests and the acceptance binary.

#include "protodg/synthetic.hpp"
#include "protodg/trainer.hpp"

namespace protodg::testing {

inline constexpr double kFixtureNoise = 0.4;
inline constexpr std::size_t kFixtureEpochs = 30;

inline SynthConfig fixture_synth(std::size_t subjects = 6, std::size_t per_class = 20) {
    SynthConfig c;
    c.n_subjects = subjects;
    c.trials_per_class_per_subject = per_class;
    c.n_channels = 8;
    c.n_samples = 200;
    c.sample_rate_hz = 250;
    c.noise_scale = kFixtureNoise;
    c.seed = 0;
    return c;
}

inline NetworkConfig fixture_network() {
    NetworkConfig n;
    n.n_channels = 8;
    n.n_samples = 200;
    n.temporal_kernel = 5;
    n.pool = 2;
    n.block_filters = {8, 8, 16, 16, 16};
    return n;
}

inline TrainConfig fixture_train(Method m, std::uint64_t seed = 0, std::size_t epochs = kFixtureEpochs) {
    TrainConfig c;
    c.method = m;
    c.seed = seed;
    c.epochs = epochs;
    c.network = fixture_network();
    return c;
}

}  // namespace protodg::testing
