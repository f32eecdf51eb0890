#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "protodg/synthetic.hpp"

using namespace protodg;

namespace {

// Direct periodogram power summed over DFT bins whose frequency lies in [lo, hi].
double band_power(std::span<const float> x, double fs, double lo, double hi) {
    const std::size_t n = x.size();
    double total = 0.0;
    for (std::size_t k = 1; k < n / 2; ++k) {
        const double f = static_cast<double>(k) * fs / static_cast<double>(n);
        if (f < lo || f > hi) continue;
        double re = 0.0, im = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double a = 2.0 * std::numbers::pi * static_cast<double>(k * i) / static_cast<double>(n);
            re += x[i] * std::cos(a);
            im -= x[i] * std::sin(a);
        }
        total += re * re + im * im;
    }
    return total;
}

}  // namespace

TEST(Synthetic, CountsAndOrdering) {
    SynthConfig c;
    c.n_subjects = 6;
    c.trials_per_class_per_subject = 20;
    const auto s = generate_synthetic(c);
    EXPECT_EQ(s.n_trials(), 240u);
    EXPECT_EQ(s.n_channels, 8u);
    EXPECT_EQ(s.n_samples, 200u);
    EXPECT_EQ(s.sample_rate_hz, 250u);
    EXPECT_EQ(s.subjects(), (std::vector<std::uint16_t>{1, 2, 3, 4, 5, 6}));
    for (std::size_t i = 0; i < s.n_trials(); ++i) {
        EXPECT_EQ(s.subject_ids[i], 1 + i / 40);
        EXPECT_EQ(s.class_ids[i], i % 2);
        EXPECT_EQ(s.session_ids[i], 1);
    }
    EXPECT_NO_THROW(s.validate());
}

TEST(Synthetic, SameSeedIdentical) {
    SynthConfig c;
    c.n_subjects = 2;
    c.trials_per_class_per_subject = 3;
    EXPECT_EQ(generate_synthetic(c), generate_synthetic(c));
    auto d = c;
    d.seed = 1;
    EXPECT_NE(generate_synthetic(c).signals, generate_synthetic(d).signals);
}

TEST(Synthetic, RhythmInAlphaBandAndDistinctMixing) {
    SynthConfig c;
    c.trials_per_class_per_subject = 1;
    const auto d = generate_synthetic_detailed(c);
    ASSERT_EQ(d.mixing.size(), 6u);
    for (double f : d.rhythm_hz) {
        EXPECT_GE(f, 9.0);
        EXPECT_LE(f, 11.0);
    }
    for (std::size_t a = 0; a < 6; ++a)
        for (std::size_t b = a + 1; b < 6; ++b) {
            double fro = 0.0;
            for (std::size_t i = 0; i < d.mixing[a].size(); ++i)
                fro += (d.mixing[a][i] - d.mixing[b][i]) * (d.mixing[a][i] - d.mixing[b][i]);
            EXPECT_GT(std::sqrt(fro), 0.0);
        }
}

TEST(Synthetic, ObservedIsMixedSources) {
    SynthConfig c;
    c.n_subjects = 2;
    c.trials_per_class_per_subject = 2;
    const auto d = generate_synthetic_detailed(c);
    const std::size_t C = c.n_channels, T = c.n_samples;
    for (std::size_t t = 0; t < d.observed.n_trials(); ++t) {
        const auto& A = d.mixing[d.observed.subject_ids[t] - 1];
        auto obs = d.observed.trial(t), src = d.sources.trial(t);
        for (std::size_t i = 0; i < C; ++i)
            for (std::size_t n = 0; n < T; n += 17) {
                double acc = 0.0;
                for (std::size_t j = 0; j < C; ++j) acc += A[i * C + j] * src[j * T + n];
                EXPECT_NEAR(obs[i * T + n], acc, 1e-5);
            }
    }
}

TEST(Synthetic, LateralisedBandPowerBeforeMixing) {
    SynthConfig c;  // default noise_scale 1.0
    const auto d = generate_synthetic_detailed(c);
    const auto& s = d.sources;
    const std::size_t C = s.n_channels, T = s.n_samples;
    std::size_t agree = 0;
    for (std::size_t t = 0; t < s.n_trials(); ++t) {
        auto tr = s.trial(t);
        double first = 0.0, second = 0.0;
        for (std::size_t ch = 0; ch < C; ++ch) {
            const double p = band_power(tr.subspan(ch * T, T), s.sample_rate_hz, 8.0, 12.0);
            (ch < C / 2 ? first : second) += p;
        }
        // class 0 attenuates the first half, class 1 the second
        agree += s.class_ids[t] == 0 ? first < second : second < first;
    }
    EXPECT_GE(static_cast<double>(agree) / static_cast<double>(s.n_trials()), 0.9)
        << agree << " of " << s.n_trials();
}

TEST(Synthetic, ConfigValidation) {
    SynthConfig c;
    c.n_channels = 7;
    EXPECT_THROW(generate_synthetic(c), ParameterError);
    c = SynthConfig{};
    c.noise_scale = 0.0;
    EXPECT_THROW(generate_synthetic(c), ParameterError);
    c = SynthConfig{};
    c.n_subjects = 0;
    EXPECT_THROW(generate_synthetic(c), ParameterError);
}
