#pragma once

// EEG-like synthetic trials: a subject-specific alpha rhythm whose amplitude
// drops on one half of the source channels depending on the class, plus
// 1/f noise, observed through a subject-specific channel-mixing matrix.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "protodg/data_io.hpp"
#include "protodg/tensor.hpp"

namespace protodg {

struct SynthConfig {
    std::size_t n_subjects = 6;
    std::size_t trials_per_class_per_subject = 20;
    std::size_t n_channels = 8;
    std::size_t n_samples = 200;
    std::uint32_t sample_rate_hz = 250;
    double noise_scale = 1.0;
    std::uint64_t seed = 0;
    // Spread of the mixing matrix around the identity: A = I + spread * G / sqrt(C).
    double mixing_spread = 0.5;

    void validate() const {
        if (n_subjects == 0 || trials_per_class_per_subject == 0 || n_channels == 0 || n_samples == 0 ||
            sample_rate_hz == 0)
            throw ParameterError("synthetic config: sizes and sample rate must be positive");
        if (n_channels % 2 != 0) throw ParameterError("synthetic config: n_channels must be even");
        if (!(noise_scale > 0.0)) throw ParameterError("synthetic config: noise_scale must be positive");
        if (!(mixing_spread >= 0.0)) throw ParameterError("synthetic config: mixing_spread must be >= 0");
        if (n_subjects > 65535) throw ParameterError("synthetic config: too many subjects");
    }
};

inline constexpr double kAttenuatedGain = 0.4;

struct SyntheticData {
    TrialSet observed;
    TrialSet sources;                         // same trials before channel mixing
    std::vector<std::vector<double>> mixing;  // per subject, row-major [C x C]
    std::vector<double> rhythm_hz;            // per subject
};

namespace detail {

// Unit-RMS pink noise from white noise through a three-pole 1/f approximation.
inline void pink_noise(std::span<double> out, Rng& rng) {
    std::normal_distribution<double> white(0.0, 1.0);
    double b0 = 0.0, b1 = 0.0, b2 = 0.0;
    auto next = [&] {
        const double w = white(rng);
        b0 = 0.99765 * b0 + w * 0.0990460;
        b1 = 0.96300 * b1 + w * 0.2965164;
        b2 = 0.57000 * b2 + w * 1.0526913;
        return b0 + b1 + b2 + w * 0.1848;
    };
    for (int i = 0; i < 256; ++i) next();  // settle the filter state
    double ss = 0.0;
    for (auto& v : out) {
        v = next();
        ss += v * v;
    }
    const double rms = std::sqrt(ss / static_cast<double>(out.size()));
    if (rms > 0.0)
        for (auto& v : out) v /= rms;
}

}  // namespace detail

// Subjects are numbered from 1, all trials are session 1. Trials are ordered
// by subject, then alternate class 0 / class 1.
inline SyntheticData generate_synthetic_detailed(const SynthConfig& cfg) {
    cfg.validate();
    const std::size_t C = cfg.n_channels, T = cfg.n_samples;
    Rng rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> uni01(0.0, 1.0);

    SyntheticData out;
    for (TrialSet* s : {&out.observed, &out.sources}) {
        s->n_channels = C;
        s->n_samples = T;
        s->sample_rate_hz = cfg.sample_rate_hz;
    }
    std::vector<double> src(C * T), noise(T);
    std::vector<float> obs_f(C * T), src_f(C * T);
    for (std::size_t s = 0; s < cfg.n_subjects; ++s) {
        std::vector<double> a(C * C);
        for (std::size_t i = 0; i < C; ++i)
            for (std::size_t j = 0; j < C; ++j)
                a[i * C + j] = (i == j ? 1.0 : 0.0) + cfg.mixing_spread * gauss(rng) / std::sqrt(static_cast<double>(C));
        const double f = 9.0 + 2.0 * uni01(rng);
        out.mixing.push_back(a);
        out.rhythm_hz.push_back(f);
        const auto subject = static_cast<std::uint16_t>(s + 1);
        for (std::size_t t = 0; t < cfg.trials_per_class_per_subject; ++t)
            for (std::uint16_t cls = 0; cls < 2; ++cls) {
                for (std::size_t c = 0; c < C; ++c) {
                    const bool first_half = c < C / 2;
                    const bool attenuated = (cls == 0) == first_half;
                    const double amp = attenuated ? kAttenuatedGain : 1.0;
                    const double phase = 2.0 * std::numbers::pi * uni01(rng);
                    detail::pink_noise(noise, rng);
                    for (std::size_t n = 0; n < T; ++n) {
                        const double tsec = static_cast<double>(n) / cfg.sample_rate_hz;
                        src[c * T + n] = amp * std::sin(2.0 * std::numbers::pi * f * tsec + phase) +
                                         cfg.noise_scale * noise[n];
                    }
                }
                for (std::size_t i = 0; i < C; ++i)
                    for (std::size_t n = 0; n < T; ++n) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < C; ++j) acc += a[i * C + j] * src[j * T + n];
                        obs_f[i * T + n] = static_cast<float>(acc);
                        src_f[i * T + n] = static_cast<float>(src[i * T + n]);
                    }
                out.observed.push_back(obs_f, subject, cls, 1);
                out.sources.push_back(src_f, subject, cls, 1);
            }
    }
    return out;
}

inline TrialSet generate_synthetic(const SynthConfig& cfg) { return generate_synthetic_detailed(cfg).observed; }

}  // namespace protodg
