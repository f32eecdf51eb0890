#pragma once

// Chebyshev type-I low-pass design and zero-phase anti-aliasing decimation.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "protodg/data_io.hpp"
#include "protodg/tensor.hpp"

namespace protodg {

// y = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2) x
struct Biquad {
    double b0, b1, b2;
    double a1, a2;
};

// Digital Chebyshev type-I low-pass as second-order sections. cutoff is the
// passband edge as a fraction of Nyquist. The analog prototype is mapped with
// a pre-warped bilinear transform; every section is scaled to unit gain at DC.
inline std::vector<Biquad> design_cheby1_lowpass(int order, double ripple_db, double cutoff) {
    if (order < 2 || order % 2 != 0) throw ParameterError("cheby1: order must be even and >= 2");
    if (!(ripple_db > 0.0)) throw ParameterError("cheby1: ripple must be > 0 dB");
    if (!(cutoff > 0.0 && cutoff < 1.0)) throw ParameterError("cheby1: cutoff must be in (0,1)");
    const double eps = std::sqrt(std::pow(10.0, ripple_db / 10.0) - 1.0);
    const double mu = std::asinh(1.0 / eps) / order;
    const double fs = 2.0;
    const double warped = 2.0 * fs * std::tan(std::numbers::pi * cutoff / fs);
    std::vector<Biquad> sos;
    for (int k = 1; k <= order / 2; ++k) {
        const double theta = std::numbers::pi * (2.0 * k - 1.0) / (2.0 * order);
        const std::complex<double> pa(-std::sinh(mu) * std::sin(theta), std::cosh(mu) * std::cos(theta));
        const std::complex<double> z = (2.0 * fs + warped * pa) / (2.0 * fs - warped * pa);
        const double a1 = -2.0 * z.real();
        const double a2 = std::norm(z);
        const double g = (1.0 + a1 + a2) / 4.0;  // zeros at z = -1 give numerator 4 at DC
        sos.push_back({g, 2.0 * g, g, a1, a2});
    }
    return sos;
}

// |H(e^{jw})| for w in radians per sample.
inline double magnitude_response(const std::vector<Biquad>& sos, double w) {
    const std::complex<double> z1 = std::polar(1.0, -w), z2 = z1 * z1;
    std::complex<double> h(1.0, 0.0);
    for (const auto& s : sos) h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
    return std::abs(h);
}

// Transposed direct-form II cascade. zi holds two state values per section
// and is updated in place.
inline void sosfilt(const std::vector<Biquad>& sos, std::vector<double>& x, std::vector<double>& zi) {
    for (std::size_t s = 0; s < sos.size(); ++s) {
        const auto& q = sos[s];
        double z1 = zi[2 * s], z2 = zi[2 * s + 1];
        for (auto& v : x) {
            const double in = v;
            const double y = q.b0 * in + z1;
            z1 = q.b1 * in - q.a1 * y + z2;
            z2 = q.b2 * in - q.a2 * y;
            v = y;
        }
        zi[2 * s] = z1;
        zi[2 * s + 1] = z2;
    }
}

// Steady-state section states for a unit step input.
inline std::vector<double> sosfilt_zi(const std::vector<Biquad>& sos) {
    std::vector<double> zi;
    double scale = 1.0;
    for (const auto& q : sos) {
        const double g = (q.b0 + q.b1 + q.b2) / (1.0 + q.a1 + q.a2);
        const double z2 = q.b2 - q.a2 * g;
        const double z1 = q.b1 - q.a1 * g + z2;
        zi.push_back(scale * z1);
        zi.push_back(scale * z2);
        scale *= g;
    }
    return zi;
}

// Forward-backward filtering with odd extension of padlen samples at each
// end and steady-state initial conditions.
inline std::vector<double> sosfiltfilt(const std::vector<Biquad>& sos, std::span<const double> x, std::size_t padlen) {
    const std::size_t n = x.size();
    if (padlen >= n) padlen = n - 1;
    std::vector<double> ext;
    ext.reserve(n + 2 * padlen);
    for (std::size_t i = padlen; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (std::size_t i = 1; i <= padlen; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

    const auto zi = sosfilt_zi(sos);
    auto state = zi;
    for (auto& v : state) v *= ext.front();
    sosfilt(sos, ext, state);
    std::reverse(ext.begin(), ext.end());
    state = zi;
    for (auto& v : state) v *= ext.front();
    sosfilt(sos, ext, state);
    std::reverse(ext.begin(), ext.end());
    return {ext.begin() + static_cast<std::ptrdiff_t>(padlen), ext.begin() + static_cast<std::ptrdiff_t>(padlen + n)};
}

inline constexpr int kDecimateOrder = 8;
inline constexpr double kDecimateRippleDb = 0.05;

inline std::vector<Biquad> decimation_filter(std::size_t q) {
    return design_cheby1_lowpass(kDecimateOrder, kDecimateRippleDb, 0.8 / static_cast<double>(q));
}

// Order-8 Chebyshev type-I low-pass (0.05 dB ripple, edge at 0.8 of the new
// Nyquist), zero-phase, then every q-th sample from index 0.
inline std::vector<double> cheby1_decimate(std::span<const double> signal, std::size_t q) {
    if (q < 2) throw ParameterError("decimate: factor must be >= 2, got " + std::to_string(q));
    if (signal.size() < 3 * static_cast<std::size_t>(kDecimateOrder))
        throw ParameterError("decimate: signal of " + std::to_string(signal.size()) +
                             " samples is shorter than 3x the filter order");
    const auto sos = decimation_filter(q);
    // 3 * (2 * sections + 1) edge samples, the usual filtfilt default
    const auto filtered = sosfiltfilt(sos, signal, 3 * (2 * sos.size() + 1));
    std::vector<double> out;
    out.reserve((signal.size() + q - 1) / q);
    for (std::size_t i = 0; i < filtered.size(); i += q) out.push_back(filtered[i]);
    return out;
}

// Decimates every channel of every trial; the sample rate is divided by q.
inline TrialSet decimate_trialset(const TrialSet& set, std::size_t q) {
    if (set.sample_rate_hz % q != 0)
        throw ParameterError("decimate: sample rate " + std::to_string(set.sample_rate_hz) + " not divisible by " +
                             std::to_string(q));
    TrialSet out = empty_like(set);
    out.n_samples = (set.n_samples + q - 1) / q;
    out.sample_rate_hz = static_cast<std::uint32_t>(set.sample_rate_hz / q);
    std::vector<float> buf(out.trial_size());
    std::vector<double> ch(set.n_samples);
    for (std::size_t t = 0; t < set.n_trials(); ++t) {
        auto tr = set.trial(t);
        for (std::size_t c = 0; c < set.n_channels; ++c) {
            for (std::size_t i = 0; i < set.n_samples; ++i) ch[i] = tr[c * set.n_samples + i];
            const auto d = cheby1_decimate(ch, q);
            for (std::size_t i = 0; i < d.size(); ++i) buf[c * out.n_samples + i] = static_cast<float>(d[i]);
        }
        out.push_back(buf, set.subject_ids[t], set.class_ids[t], set.session_ids[t]);
    }
    return out;
}

}  // namespace protodg
