#pragma once

// Differentiable tensor operations. Every op takes the tape it records on;
// nothing is recorded when the tape is in no_grad mode or when no input
// requires a gradient.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "protodg/tensor.hpp"

namespace protodg {

enum class RunMode { train, infer };

namespace detail {

inline void require_rank(const Var& v, std::size_t rank, const char* what) {
    if (v->rank() != rank)
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(v->shape()));
}

inline void accumulate(const Var& dst, std::span<const double> src) {
    if (!dst->requires_grad()) return;
    auto g = dst->grad();
    for (std::size_t i = 0; i < src.size(); ++i) g[i] += src[i];
}

}  // namespace detail

struct Stride2 {
    std::size_t h = 1;
    std::size_t w = 1;
};

// Valid cross-correlation. input [b,ci,h,w], kernels [co,ci,kh,kw], bias [co].
inline Var conv2d(Tape& tape, const Var& input, const Var& kernels, const Var& bias, Stride2 stride = {}) {
    detail::require_rank(input, 4, "conv2d input");
    detail::require_rank(kernels, 4, "conv2d kernels");
    detail::require_rank(bias, 1, "conv2d bias");
    if (input->dim(1) != kernels->dim(1))
        throw ShapeError("conv2d: input " + to_string(input->shape()) + " and kernels " +
                         to_string(kernels->shape()) + " disagree on input channels");
    if (bias->dim(0) != kernels->dim(0))
        throw ShapeError("conv2d: bias " + to_string(bias->shape()) + " does not match kernels " +
                         to_string(kernels->shape()));
    if (stride.h == 0 || stride.w == 0) throw ParameterError("conv2d: strides must be >= 1");
    const std::size_t B = input->dim(0), CI = input->dim(1), H = input->dim(2), W = input->dim(3);
    const std::size_t CO = kernels->dim(0), KH = kernels->dim(2), KW = kernels->dim(3);
    if (KH > H || KW > W)
        throw ShapeError("conv2d: kernels " + to_string(kernels->shape()) + " larger than input " +
                         to_string(input->shape()));
    const std::size_t OH = (H - KH) / stride.h + 1, OW = (W - KW) / stride.w + 1;

    auto out = make_var({B, CO, OH, OW});
    {
        const double* x = input->data().data();
        const double* k = kernels->data().data();
        const double* bs = bias->data().data();
        double* y = out->data().data();
        for (std::size_t n = 0; n < B; ++n)
            for (std::size_t co = 0; co < CO; ++co) {
                double* yp = y + (n * CO + co) * OH * OW;
                std::fill(yp, yp + OH * OW, bs[co]);
                for (std::size_t ci = 0; ci < CI; ++ci) {
                    const double* xp = x + (n * CI + ci) * H * W;
                    const double* kp = k + (co * CI + ci) * KH * KW;
                    for (std::size_t i = 0; i < KH; ++i)
                        for (std::size_t j = 0; j < KW; ++j) {
                            const double wv = kp[i * KW + j];
                            for (std::size_t oh = 0; oh < OH; ++oh) {
                                const double* xr = xp + (oh * stride.h + i) * W + j;
                                double* yr = yp + oh * OW;
                                if (stride.w == 1) {
                                    for (std::size_t ow = 0; ow < OW; ++ow) yr[ow] += wv * xr[ow];
                                } else {
                                    for (std::size_t ow = 0; ow < OW; ++ow) yr[ow] += wv * xr[ow * stride.w];
                                }
                            }
                        }
                }
            }
    }

    if (tape.tracks({&input, &kernels, &bias})) {
        tape.record({input, kernels, bias}, out, [=, o = out.get()] {
            const double* gy = o->grad().data();
            const double* x = input->data().data();
            const double* k = kernels->data().data();
            const bool want_x = input->requires_grad();
            const bool want_k = kernels->requires_grad();
            double* gx = want_x ? input->grad().data() : nullptr;
            double* gk = want_k ? kernels->grad().data() : nullptr;
            if (bias->requires_grad()) {
                double* gb = bias->grad().data();
                for (std::size_t n = 0; n < B; ++n)
                    for (std::size_t co = 0; co < CO; ++co) {
                        const double* g = gy + (n * CO + co) * OH * OW;
                        double s = 0.0;
                        for (std::size_t t = 0; t < OH * OW; ++t) s += g[t];
                        gb[co] += s;
                    }
            }
            for (std::size_t n = 0; n < B; ++n)
                for (std::size_t co = 0; co < CO; ++co) {
                    const double* gp = gy + (n * CO + co) * OH * OW;
                    for (std::size_t ci = 0; ci < CI; ++ci) {
                        const std::size_t xoff = (n * CI + ci) * H * W;
                        const std::size_t koff = (co * CI + ci) * KH * KW;
                        for (std::size_t i = 0; i < KH; ++i)
                            for (std::size_t j = 0; j < KW; ++j) {
                                const double wv = k[koff + i * KW + j];
                                double acc = 0.0;
                                for (std::size_t oh = 0; oh < OH; ++oh) {
                                    const std::size_t row = xoff + (oh * stride.h + i) * W + j;
                                    const double* gr = gp + oh * OW;
                                    for (std::size_t ow = 0; ow < OW; ++ow) {
                                        const std::size_t xi = row + ow * stride.w;
                                        if (want_k) acc += gr[ow] * x[xi];
                                        if (want_x) gx[xi] += wv * gr[ow];
                                    }
                                }
                                if (want_k) gk[koff + i * KW + j] += acc;
                            }
                    }
                }
        });
    }
    return out;
}

// Valid max pooling; ties resolve to the first element in row-major order.
inline Var maxpool2d(Tape& tape, const Var& input, Stride2 window, Stride2 stride) {
    detail::require_rank(input, 4, "maxpool2d input");
    if (window.h == 0 || window.w == 0 || stride.h == 0 || stride.w == 0)
        throw ParameterError("maxpool2d: window and stride must be >= 1");
    const std::size_t B = input->dim(0), C = input->dim(1), H = input->dim(2), W = input->dim(3);
    if (window.h > H || window.w > W)
        throw ShapeError("maxpool2d: window (" + std::to_string(window.h) + "," + std::to_string(window.w) +
                         ") larger than input " + to_string(input->shape()));
    const std::size_t OH = (H - window.h) / stride.h + 1, OW = (W - window.w) / stride.w + 1;
    auto out = make_var({B, C, OH, OW});
    std::vector<std::size_t> argmax(out->size());
    const double* x = input->data().data();
    double* y = out->data().data();
    for (std::size_t plane = 0; plane < B * C; ++plane) {
        const std::size_t xoff = plane * H * W;
        for (std::size_t oh = 0; oh < OH; ++oh)
            for (std::size_t ow = 0; ow < OW; ++ow) {
                std::size_t best = xoff + oh * stride.h * W + ow * stride.w;
                for (std::size_t i = 0; i < window.h; ++i)
                    for (std::size_t j = 0; j < window.w; ++j) {
                        const std::size_t idx = xoff + (oh * stride.h + i) * W + ow * stride.w + j;
                        if (x[idx] > x[best]) best = idx;
                    }
                const std::size_t o = (plane * OH + oh) * OW + ow;
                y[o] = x[best];
                argmax[o] = best;
            }
    }
    if (tape.tracks({&input})) {
        tape.record({input}, out, [input, o = out.get(), argmax = std::move(argmax)] {
            auto gy = o->grad();
            auto gx = input->grad();
            for (std::size_t i = 0; i < gy.size(); ++i) gx[argmax[i]] += gy[i];
        });
    }
    return out;
}

struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    explicit BatchNormState(std::size_t channels = 0)
        : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

// Per-channel normalization over (batch, h, w). Train mode uses batch
// statistics and updates the running estimates; infer mode uses the running
// estimates.
inline Var batchnorm(Tape& tape, const Var& input, const Var& gamma, const Var& beta, BatchNormState& state,
                     RunMode mode) {
    detail::require_rank(input, 4, "batchnorm input");
    const std::size_t B = input->dim(0), C = input->dim(1), HW = input->dim(2) * input->dim(3);
    if (gamma->size() != C || beta->size() != C || state.running_mean.size() != C ||
        state.running_var.size() != C)
        throw ShapeError("batchnorm: channel count of " + to_string(input->shape()) +
                         " does not match affine/state size " + std::to_string(gamma->size()));
    const std::size_t N = B * HW;
    if (mode == RunMode::train && N < 2)
        throw ParameterError("batchnorm: train mode needs at least 2 elements per channel, got " +
                             std::to_string(N));

    auto out = make_var(input->shape());
    const double* x = input->data().data();
    double* y = out->data().data();
    std::vector<double> mean(C), invstd(C);
    for (std::size_t c = 0; c < C; ++c) {
        double m, v;
        if (mode == RunMode::train) {
            double s = 0.0;
            for (std::size_t n = 0; n < B; ++n) {
                const double* p = x + (n * C + c) * HW;
                for (std::size_t t = 0; t < HW; ++t) s += p[t];
            }
            m = s / static_cast<double>(N);
            double ss = 0.0;
            for (std::size_t n = 0; n < B; ++n) {
                const double* p = x + (n * C + c) * HW;
                for (std::size_t t = 0; t < HW; ++t) ss += (p[t] - m) * (p[t] - m);
            }
            v = ss / static_cast<double>(N);
            const double unbiased = ss / static_cast<double>(N - 1);
            state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * m;
            state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
        } else {
            m = state.running_mean[c];
            v = state.running_var[c];
        }
        mean[c] = m;
        invstd[c] = 1.0 / std::sqrt(v + state.eps);
        const double g = (*gamma)[c], b = (*beta)[c];
        for (std::size_t n = 0; n < B; ++n) {
            const double* p = x + (n * C + c) * HW;
            double* q = y + (n * C + c) * HW;
            for (std::size_t t = 0; t < HW; ++t) q[t] = g * (p[t] - m) * invstd[c] + b;
        }
    }

    if (tape.tracks({&input, &gamma, &beta})) {
        tape.record({input, gamma, beta}, out,
                    [=, o = out.get(), mean = std::move(mean), invstd = std::move(invstd)] {
                        const double* gy = o->grad().data();
                        const double* xv = input->data().data();
                        for (std::size_t c = 0; c < C; ++c) {
                            double sum_g = 0.0, sum_gx = 0.0;
                            for (std::size_t n = 0; n < B; ++n) {
                                const double* p = xv + (n * C + c) * HW;
                                const double* g = gy + (n * C + c) * HW;
                                for (std::size_t t = 0; t < HW; ++t) {
                                    sum_g += g[t];
                                    sum_gx += g[t] * (p[t] - mean[c]) * invstd[c];
                                }
                            }
                            if (gamma->requires_grad()) gamma->grad()[c] += sum_gx;
                            if (beta->requires_grad()) beta->grad()[c] += sum_g;
                            if (!input->requires_grad()) continue;
                            double* gx = input->grad().data();
                            const double gm = (*gamma)[c];
                            for (std::size_t n = 0; n < B; ++n) {
                                const double* p = xv + (n * C + c) * HW;
                                const double* g = gy + (n * C + c) * HW;
                                double* d = gx + (n * C + c) * HW;
                                for (std::size_t t = 0; t < HW; ++t) {
                                    if (mode == RunMode::train) {
                                        const double xhat = (p[t] - mean[c]) * invstd[c];
                                        d[t] += gm * invstd[c] *
                                                (g[t] - sum_g / static_cast<double>(N) -
                                                 xhat * sum_gx / static_cast<double>(N));
                                    } else {
                                        d[t] += gm * invstd[c] * g[t];
                                    }
                                }
                            }
                        }
                    });
    }
    return out;
}

inline Var elu(Tape& tape, const Var& input) {
    auto out = make_var(input->shape());
    auto x = input->data();
    auto y = out->data();
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : std::expm1(x[i]);
    if (tape.tracks({&input})) {
        tape.record({input}, out, [input, o = out.get()] {
            auto x = input->data();
            auto y = o->data();
            auto gy = o->grad();
            auto gx = input->grad();
            for (std::size_t i = 0; i < x.size(); ++i) gx[i] += gy[i] * (x[i] > 0.0 ? 1.0 : y[i] + 1.0);
        });
    }
    return out;
}

// input [b,n], weight [m,n], bias [m] -> [b,m]
inline Var linear(Tape& tape, const Var& input, const Var& weight, const Var& bias) {
    detail::require_rank(input, 2, "linear input");
    detail::require_rank(weight, 2, "linear weight");
    detail::require_rank(bias, 1, "linear bias");
    const std::size_t B = input->dim(0), N = input->dim(1), M = weight->dim(0);
    if (weight->dim(1) != N || bias->dim(0) != M)
        throw ShapeError("linear: input " + to_string(input->shape()) + ", weight " +
                         to_string(weight->shape()) + ", bias " + to_string(bias->shape()) + " are incompatible");
    auto out = make_var({B, M});
    const double* x = input->data().data();
    const double* w = weight->data().data();
    double* y = out->data().data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t m = 0; m < M; ++m) {
            double s = (*bias)[m];
            const double* xr = x + b * N;
            const double* wr = w + m * N;
            for (std::size_t n = 0; n < N; ++n) s += xr[n] * wr[n];
            y[b * M + m] = s;
        }
    if (tape.tracks({&input, &weight, &bias})) {
        tape.record({input, weight, bias}, out, [=, o = out.get()] {
            const double* gy = o->grad().data();
            const double* x = input->data().data();
            const double* w = weight->data().data();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t m = 0; m < M; ++m) {
                    const double g = gy[b * M + m];
                    if (bias->requires_grad()) bias->grad()[m] += g;
                    if (weight->requires_grad()) {
                        double* gw = weight->grad().data() + m * N;
                        const double* xr = x + b * N;
                        for (std::size_t n = 0; n < N; ++n) gw[n] += g * xr[n];
                    }
                    if (input->requires_grad()) {
                        double* gx = input->grad().data() + b * N;
                        const double* wr = w + m * N;
                        for (std::size_t n = 0; n < N; ++n) gx[n] += g * wr[n];
                    }
                }
        });
    }
    return out;
}

// Inverted dropout. Infer mode returns the input itself.
inline Var dropout(Tape& tape, const Var& input, double p, RunMode mode, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0)) throw ParameterError("dropout: p must be in [0,1), got " + std::to_string(p));
    if (mode == RunMode::infer || p == 0.0) return input;
    const double keep = 1.0 - p;
    std::bernoulli_distribution survive(keep);
    std::vector<double> mask(input->size());
    for (auto& m : mask) m = survive(rng) ? 1.0 / keep : 0.0;
    auto out = make_var(input->shape());
    auto x = input->data();
    auto y = out->data();
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * mask[i];
    if (tape.tracks({&input})) {
        tape.record({input}, out, [input, o = out.get(), mask = std::move(mask)] {
            auto gy = o->grad();
            auto gx = input->grad();
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * mask[i];
        });
    }
    return out;
}

inline Var reshape(Tape& tape, const Var& input, Shape shape) {
    if (numel(shape) != input->size())
        throw ShapeError("reshape: cannot view " + to_string(input->shape()) + " as " + to_string(shape));
    auto out = make_var(std::move(shape), std::vector<double>(input->data().begin(), input->data().end()));
    if (tape.tracks({&input})) {
        tape.record({input}, out, [input, o = out.get()] { detail::accumulate(input, o->grad()); });
    }
    return out;
}

// [b, ...] -> [b, n]
inline Var flatten(Tape& tape, const Var& input) {
    if (input->rank() < 1) throw ShapeError("flatten: rank-0 input");
    const std::size_t b = input->dim(0);
    return reshape(tape, input, {b, input->size() / b});
}

inline Var add(Tape& tape, const Var& a, const Var& b) {
    if (a->shape() != b->shape())
        throw ShapeError("add: " + to_string(a->shape()) + " vs " + to_string(b->shape()));
    auto out = make_var(a->shape());
    for (std::size_t i = 0; i < a->size(); ++i) (*out)[i] = (*a)[i] + (*b)[i];
    if (tape.tracks({&a, &b})) {
        tape.record({a, b}, out, [a, b, o = out.get()] {
            detail::accumulate(a, o->grad());
            detail::accumulate(b, o->grad());
        });
    }
    return out;
}

inline Var scale(Tape& tape, const Var& a, double s) {
    auto out = make_var(a->shape());
    for (std::size_t i = 0; i < a->size(); ++i) (*out)[i] = (*a)[i] * s;
    if (tape.tracks({&a})) {
        tape.record({a}, out, [a, s, o = out.get()] {
            auto g = o->grad();
            auto ga = a->grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
        });
    }
    return out;
}

inline Var mul(Tape& tape, const Var& a, const Var& b) {
    if (a->shape() != b->shape())
        throw ShapeError("mul: " + to_string(a->shape()) + " vs " + to_string(b->shape()));
    auto out = make_var(a->shape());
    for (std::size_t i = 0; i < a->size(); ++i) (*out)[i] = (*a)[i] * (*b)[i];
    if (tape.tracks({&a, &b})) {
        tape.record({a, b}, out, [a, b, o = out.get()] {
            auto g = o->grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (a->requires_grad()) a->grad()[i] += g[i] * (*b)[i];
                if (b->requires_grad()) b->grad()[i] += g[i] * (*a)[i];
            }
        });
    }
    return out;
}

inline Var sum(Tape& tape, const Var& a) {
    double s = 0.0;
    for (double v : a->data()) s += v;
    auto out = make_var({1}, s);
    if (tape.tracks({&a})) {
        tape.record({a}, out, [a, o = out.get()] {
            const double g = o->grad()[0];
            for (auto& v : a->grad()) v += g;
        });
    }
    return out;
}

inline Var mean(Tape& tape, const Var& a) { return scale(tape, sum(tape, a), 1.0 / static_cast<double>(a->size())); }

// features [b,d], prototypes [k,d] -> [b,k] squared Euclidean distances.
inline Var pairwise_sq_dist(Tape& tape, const Var& features, const Var& prototypes) {
    detail::require_rank(features, 2, "pairwise_sq_dist features");
    detail::require_rank(prototypes, 2, "pairwise_sq_dist prototypes");
    const std::size_t B = features->dim(0), D = features->dim(1), K = prototypes->dim(0);
    if (prototypes->dim(1) != D)
        throw ShapeError("pairwise_sq_dist: features " + to_string(features->shape()) + " vs prototypes " +
                         to_string(prototypes->shape()));
    auto out = make_var({B, K});
    const double* f = features->data().data();
    const double* m = prototypes->data().data();
    for (std::size_t j = 0; j < B; ++j)
        for (std::size_t i = 0; i < K; ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < D; ++k) {
                const double d = f[j * D + k] - m[i * D + k];
                s += d * d;
            }
            (*out)[j * K + i] = s;
        }
    if (tape.tracks({&features, &prototypes})) {
        tape.record({features, prototypes}, out, [=, o = out.get()] {
            const double* g = o->grad().data();
            const double* f = features->data().data();
            const double* m = prototypes->data().data();
            const bool wf = features->requires_grad(), wm = prototypes->requires_grad();
            for (std::size_t j = 0; j < B; ++j)
                for (std::size_t i = 0; i < K; ++i) {
                    const double gji = 2.0 * g[j * K + i];
                    for (std::size_t k = 0; k < D; ++k) {
                        const double d = gji * (f[j * D + k] - m[i * D + k]);
                        if (wf) features->grad()[j * D + k] += d;
                        if (wm) prototypes->grad()[i * D + k] -= d;
                    }
                }
        });
    }
    return out;
}

inline void check_labels(std::span<const int> labels, std::size_t batch, std::size_t classes, const char* what) {
    if (labels.size() != batch)
        throw LabelError(std::string(what) + ": " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(batch));
    for (std::size_t j = 0; j < labels.size(); ++j)
        if (labels[j] < 0 || static_cast<std::size_t>(labels[j]) >= classes)
            throw LabelError(std::string(what) + ": label " + std::to_string(labels[j]) + " at trial " +
                             std::to_string(j) + " outside [0," + std::to_string(classes) + ")");
}

// Mean softmax cross-entropy over rows of logits [b,k].
inline Var softmax_cross_entropy(Tape& tape, const Var& logits, std::span<const int> labels) {
    detail::require_rank(logits, 2, "softmax_cross_entropy logits");
    const std::size_t B = logits->dim(0), K = logits->dim(1);
    check_labels(labels, B, K, "softmax_cross_entropy");
    std::vector<double> probs(B * K);
    double loss = 0.0;
    for (std::size_t j = 0; j < B; ++j) {
        const double* z = logits->data().data() + j * K;
        const double mx = *std::max_element(z, z + K);
        double s = 0.0;
        for (std::size_t i = 0; i < K; ++i) s += std::exp(z[i] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t i = 0; i < K; ++i) probs[j * K + i] = std::exp(z[i] - lse);
        loss += lse - z[labels[j]];
    }
    auto out = make_var({1}, loss / static_cast<double>(B));
    if (tape.tracks({&logits})) {
        std::vector<int> y(labels.begin(), labels.end());
        tape.record({logits}, out, [=, o = out.get(), probs = std::move(probs), y = std::move(y)] {
            const double g = o->grad()[0] / static_cast<double>(B);
            auto gz = logits->grad();
            for (std::size_t j = 0; j < B; ++j)
                for (std::size_t i = 0; i < K; ++i)
                    gz[j * K + i] += g * (probs[j * K + i] - (static_cast<int>(i) == y[j] ? 1.0 : 0.0));
        });
    }
    return out;
}

}  // namespace protodg
