#pragma once

// Convolutional prototype learning: distance-based cross-entropy (DCE),
// prototype regularization, the task loss and the joint style/semantic
// objective, plus nearest-prototype classification and open-set scoring.

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "protodg/ops.hpp"
#include "protodg/tensor.hpp"

namespace protodg {

enum class PrototypeRole { class_label, subject };

// One learnable prototype per label, stored as rows of a [K,d] tensor.
struct PrototypeSet {
    Var values;
    PrototypeRole role = PrototypeRole::class_label;

    // Prototypes start at the zero vector.
    static PrototypeSet zeros(std::size_t count, std::size_t dim, PrototypeRole role) {
        return PrototypeSet{make_var({count, dim}, 0.0, true), role};
    }

    std::size_t count() const { return values->dim(0); }
    std::size_t dim() const { return values->dim(1); }
};

struct LossBreakdown {
    double l_c = 0.0;
    double l_cp = 0.0;
    double l_d = 0.0;
    double l_dp = 0.0;
    double total = 0.0;
};

struct LossWeights {
    double gamma = 1.0;
    double alpha = 0.1;
    double beta1 = 0.001;
    double beta2 = 0.001;
};

namespace detail {

inline void check_distances(const Var& dists, double gamma) {
    if (!(gamma > 0.0)) throw ParameterError("gamma must be > 0, got " + std::to_string(gamma));
    for (std::size_t i = 0; i < dists->size(); ++i)
        if (!std::isfinite((*dists)[i]))
            throw NumericError("non-finite distance at flat index " + std::to_string(i));
}

}  // namespace detail

// p[j,i] = exp(-gamma d[j,i]) / sum_k exp(-gamma d[j,k]), row max subtracted.
inline Var dce_probabilities(Tape& tape, const Var& dists, double gamma) {
    detail::require_rank(dists, 2, "dce_probabilities");
    detail::check_distances(dists, gamma);
    const std::size_t B = dists->dim(0), K = dists->dim(1);
    auto out = make_var({B, K});
    for (std::size_t j = 0; j < B; ++j) {
        const double* d = dists->data().data() + j * K;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < K; ++i) mx = std::max(mx, -gamma * d[i]);
        double s = 0.0;
        for (std::size_t i = 0; i < K; ++i) s += std::exp(-gamma * d[i] - mx);
        for (std::size_t i = 0; i < K; ++i) (*out)[j * K + i] = std::exp(-gamma * d[i] - mx) / s;
    }
    if (tape.tracks({&dists})) {
        tape.record({dists}, out, [=, o = out.get()] {
            auto p = o->data();
            auto gp = o->grad();
            auto gd = dists->grad();
            for (std::size_t j = 0; j < B; ++j) {
                double dot = 0.0;
                for (std::size_t i = 0; i < K; ++i) dot += gp[j * K + i] * p[j * K + i];
                for (std::size_t i = 0; i < K; ++i)
                    gd[j * K + i] += -gamma * p[j * K + i] * (gp[j * K + i] - dot);
            }
        });
    }
    return out;
}

// Mean over the batch of -log p[j, y_j].
inline Var dce_loss(Tape& tape, const Var& probs, std::span<const int> labels) {
    detail::require_rank(probs, 2, "dce_loss");
    const std::size_t B = probs->dim(0), K = probs->dim(1);
    check_labels(labels, B, K, "dce_loss");
    double loss = 0.0;
    for (std::size_t j = 0; j < B; ++j) loss -= std::log((*probs)[j * K + labels[j]]);
    auto out = make_var({1}, loss / static_cast<double>(B));
    if (tape.tracks({&probs})) {
        std::vector<int> y(labels.begin(), labels.end());
        tape.record({probs}, out, [=, o = out.get(), y = std::move(y)] {
            const double g = o->grad()[0] / static_cast<double>(B);
            for (std::size_t j = 0; j < B; ++j) {
                const std::size_t idx = j * K + y[j];
                probs->grad()[idx] -= g / (*probs)[idx];
            }
        });
    }
    return out;
}

// Fused dce_loss(dce_probabilities(dists)) evaluated through log-sum-exp so a
// vanishing probability never reaches log().
inline Var dce_loss_from_distances(Tape& tape, const Var& dists, std::span<const int> labels, double gamma) {
    detail::require_rank(dists, 2, "dce_loss_from_distances");
    detail::check_distances(dists, gamma);
    const std::size_t B = dists->dim(0), K = dists->dim(1);
    check_labels(labels, B, K, "dce_loss");
    std::vector<double> probs(B * K);
    double loss = 0.0;
    for (std::size_t j = 0; j < B; ++j) {
        const double* d = dists->data().data() + j * K;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < K; ++i) mx = std::max(mx, -gamma * d[i]);
        double s = 0.0;
        for (std::size_t i = 0; i < K; ++i) s += std::exp(-gamma * d[i] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t i = 0; i < K; ++i) probs[j * K + i] = std::exp(-gamma * d[i] - lse);
        loss += lse + gamma * d[labels[j]];
    }
    auto out = make_var({1}, loss / static_cast<double>(B));
    if (tape.tracks({&dists})) {
        std::vector<int> y(labels.begin(), labels.end());
        tape.record({dists}, out, [=, o = out.get(), probs = std::move(probs), y = std::move(y)] {
            const double g = o->grad()[0] / static_cast<double>(B);
            auto gd = dists->grad();
            for (std::size_t j = 0; j < B; ++j)
                for (std::size_t i = 0; i < K; ++i)
                    gd[j * K + i] += g * gamma * ((static_cast<int>(i) == y[j] ? 1.0 : 0.0) - probs[j * K + i]);
        });
    }
    return out;
}

// Mean over the batch of ||f_j - m_{y_j}||^2.
inline Var prototype_loss(Tape& tape, const Var& features, const PrototypeSet& protos, std::span<const int> labels) {
    detail::require_rank(features, 2, "prototype_loss features");
    const Var& m = protos.values;
    const std::size_t B = features->dim(0), D = features->dim(1), K = protos.count();
    if (protos.dim() != D)
        throw ShapeError("prototype_loss: features " + to_string(features->shape()) + " vs prototypes " +
                         to_string(m->shape()));
    check_labels(labels, B, K, "prototype_loss");
    double loss = 0.0;
    for (std::size_t j = 0; j < B; ++j)
        for (std::size_t k = 0; k < D; ++k) {
            const double d = (*features)[j * D + k] - (*m)[labels[j] * D + k];
            loss += d * d;
        }
    auto out = make_var({1}, loss / static_cast<double>(B));
    if (tape.tracks({&features, &m})) {
        std::vector<int> y(labels.begin(), labels.end());
        tape.record({features, m}, out, [=, o = out.get(), y = std::move(y)] {
            const double g = 2.0 * o->grad()[0] / static_cast<double>(B);
            for (std::size_t j = 0; j < B; ++j)
                for (std::size_t k = 0; k < D; ++k) {
                    const double d = g * ((*features)[j * D + k] - (*m)[y[j] * D + k]);
                    if (features->requires_grad()) features->grad()[j * D + k] += d;
                    if (m->requires_grad()) m->grad()[y[j] * D + k] -= d;
                }
        });
    }
    return out;
}

struct TaskLoss {
    Var dce;
    Var prototype;
    Var total;
};

// dce + beta * prototype_loss for one head.
inline TaskLoss task_loss_terms(Tape& tape, const Var& features, const PrototypeSet& protos,
                                std::span<const int> labels, double gamma, double beta) {
    if (!(beta >= 0.0)) throw ParameterError("beta must be >= 0, got " + std::to_string(beta));
    auto dists = pairwise_sq_dist(tape, features, protos.values);
    auto dce = dce_loss_from_distances(tape, dists, labels, gamma);
    auto pl = prototype_loss(tape, features, protos, labels);
    auto total = add(tape, dce, scale(tape, pl, beta));
    return {dce, pl, total};
}

inline Var task_loss(Tape& tape, const Var& features, const PrototypeSet& protos, std::span<const int> labels,
                     double gamma, double beta) {
    return task_loss_terms(tape, features, protos, labels, gamma, beta).total;
}

struct CombinedLoss {
    Var total;
    LossBreakdown breakdown;
};

// L_c + beta1 L_cp + alpha (L_d + beta2 L_dp)
inline CombinedLoss combined_loss(Tape& tape, const Var& semantic_feats, const PrototypeSet& class_protos,
                                  std::span<const int> class_labels, const Var& style_feats,
                                  const PrototypeSet& subject_protos, std::span<const int> subject_labels,
                                  const LossWeights& w) {
    if (!(w.alpha >= 0.0 && w.beta1 >= 0.0 && w.beta2 >= 0.0))
        throw ParameterError("combined_loss: alpha, beta1 and beta2 must be >= 0");
    auto cls = task_loss_terms(tape, semantic_feats, class_protos, class_labels, w.gamma, w.beta1);
    auto subj = task_loss_terms(tape, style_feats, subject_protos, subject_labels, w.gamma, w.beta2);
    auto total = add(tape, cls.total, scale(tape, subj.total, w.alpha));
    LossBreakdown bd{cls.dce->item(), cls.prototype->item(), subj.dce->item(), subj.prototype->item(),
                     total->item()};
    return {total, bd};
}

// Nearest prototype by squared Euclidean distance; ties go to the lowest index.
inline std::vector<int> classify(const Tensor& features, const PrototypeSet& protos) {
    const std::size_t B = features.dim(0), D = features.dim(1), K = protos.count();
    if (protos.dim() != D)
        throw ShapeError("classify: features " + to_string(features.shape()) + " vs prototypes " +
                         to_string(protos.values->shape()));
    const Tensor& m = *protos.values;
    std::vector<int> labels(B, 0);
    for (std::size_t j = 0; j < B; ++j) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < K; ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < D; ++k) {
                const double d = features[j * D + k] - m[i * D + k];
                s += d * d;
            }
            if (s < best) {
                best = s;
                labels[j] = static_cast<int>(i);
            }
        }
    }
    return labels;
}

// Minimum squared distance to any prototype; larger means less like any
// known label.
inline std::vector<double> openset_score(const Tensor& features, const PrototypeSet& protos) {
    const std::size_t B = features.dim(0), D = features.dim(1), K = protos.count();
    if (protos.dim() != D)
        throw ShapeError("openset_score: features " + to_string(features.shape()) + " vs prototypes " +
                         to_string(protos.values->shape()));
    const Tensor& m = *protos.values;
    std::vector<double> scores(B, std::numeric_limits<double>::infinity());
    for (std::size_t j = 0; j < B; ++j)
        for (std::size_t i = 0; i < K; ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < D; ++k) {
                const double d = features[j * D + k] - m[i * D + k];
                s += d * d;
            }
            scores[j] = std::min(scores[j], s);
        }
    return scores;
}

}  // namespace protodg
